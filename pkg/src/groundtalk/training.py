"""Supervised pretraining and interactive reinforcement training.

Questioner and answerer are updated with REINFORCE, weighting the
log-likelihood of their own sampled symbols by (r - baseline). The guesser,
whose argmax defines the binary reward, is updated with cross-entropy on the
dialogues the other two just generated. A TuneMask picks which of the three
learn, which is how the ablation grid is reproduced.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nx
from .agents import ANSWER_INDEX, AnswererModel, GuesserModel, QuestionerModel, build_models, history_tokens
from .env import EnvConfig, object_features, scene_stream
from .errors import ConfigurationError, TrainingDivergence
from .pruning import PruneConfig, prune_dialogue

log = logging.getLogger(__name__)

CLIP_NORM = 5.0
BASELINE_DECAY = 0.99


@dataclass(frozen=True)
class TuneMask:
    tune_q: bool = False
    tune_a: bool = False
    tune_g: bool = False
    prune: bool = False

    @classmethod
    def parse(cls, tune, prune=False):
        """'q,a,g' style flags. Empty string means nothing is tuned (the SL baseline)."""
        flags = {t.strip().lower() for t in tune.split(",") if t.strip()} if isinstance(tune, str) else set(tune)
        bad = flags - {"q", "a", "g"}
        if bad:
            raise ConfigurationError(f"unknown --tune flags {sorted(bad)}; use q, a, g")
        return cls("q" in flags, "a" in flags, "g" in flags, bool(prune))

    @property
    def name(self):
        tuned = "".join(c for c, f in zip("QAG", (self.tune_q, self.tune_a, self.tune_g)) if f)
        if not tuned:
            return "SL"
        if tuned == "Q" and not self.prune:
            return "RL^Q"
        return ("IRL-prune^" if self.prune else "IRL^") + tuned

    def any(self):
        return self.tune_q or self.tune_a or self.tune_g

    def to_dict(self):
        return asdict(self)


@dataclass
class Agents:
    questioner: QuestionerModel
    answerer: AnswererModel
    guesser: GuesserModel

    @property
    def vocab(self):
        return self.questioner.vocab

    @property
    def env_config(self):
        return self.questioner.env_config

    @classmethod
    def fresh(cls, env_config=None, model_config=None, seed=0):
        return cls(*build_models(env_config, model_config, seed))


# ---------------------------------------------------------------- supervised pretraining


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 3e-3
    heldout_fraction: float = 0.1
    seed: int = 0


def _split(corpus, frac):
    if not corpus:
        raise ConfigurationError("empty corpus")
    n_hold = int(len(corpus) * frac)
    if frac > 0 and len(corpus) > 1:
        n_hold = max(n_hold, 1)
    return corpus[n_hold:], corpus[:n_hold]


def questioner_examples(corpus, vocab, truncate=None):
    """(history ids, scene, target ids) per questioner decision in scripted dialogues."""
    out = []
    for rec in corpus:
        rounds = [(r.question, r.answer) for r in rec.rounds]
        for k, (q, _) in enumerate(rounds):
            out.append((history_tokens(vocab, rounds[:k], truncate), rec.scene, vocab.encode(q) + [vocab.eoq]))
        if rec.stopped:
            out.append((history_tokens(vocab, rounds, truncate), rec.scene, [vocab.stop]))
    return out


def answerer_examples(corpus, env_config):
    out = []
    for rec in corpus:
        feats = object_features(rec.scene, env_config)[rec.scene.target_index]
        for r in rec.rounds:
            out.append((r.question, feats, ANSWER_INDEX[r.answer]))
    return out


def _batches(n, size, rng):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i : i + size]


def _sgd_epochs(params, examples, loss_fn, cfg, label):
    rng = np.random.default_rng((cfg.seed, zlib.crc32(label.encode())))
    history = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for bi, idx in enumerate(_batches(len(examples), cfg.batch_size, rng)):
            batch = [examples[i] for i in idx]
            with nx.Tape() as tape:
                loss, n = loss_fn(batch)
            if not np.isfinite(loss.item()):
                raise TrainingDivergence(f"{label} loss is not finite", epoch=epoch, batch=bi)
            tape.backward(loss)
            nx.clip_grad_norm(params, CLIP_NORM)
            nx.adam_step(params, cfg.learning_rate)
            total += loss.item() * n
            count += n
        history.append(total / max(count, 1))
        log.info("%s epoch %d loss %.4f", label, epoch, history[-1])
    return history


def _questioner_loss(model, batch, weights=None):
    hist = [b[0] for b in batch]
    scenes = [b[1] for b in batch]
    targets = [b[2] for b in batch]
    return model.nll(hist, scenes, targets, weights)


def questioner_token_error(model, examples, batch_size=256):
    errors = tokens = 0
    for i in range(0, len(examples), batch_size):
        _, _, e, n = _questioner_loss(model, examples[i : i + batch_size])
        errors += e
        tokens += n
    return errors / max(tokens, 1)


def pretrain_questioner(model, corpus, cfg=PretrainConfig()):
    """Teacher-forced next-token training on scripted dialogues (full history).

    Returns (per-epoch mean token loss, held-out token error rate).
    """
    train, held = _split(list(corpus), cfg.heldout_fraction)
    ex = questioner_examples(train, model.vocab)

    def loss_fn(batch):
        loss, _, _, _ = _questioner_loss(model, batch, np.full(len(batch), 1.0 / len(batch)))
        return loss, len(batch)

    hist = _sgd_epochs(model.parameters(), ex, loss_fn, cfg, "questioner")
    held_ex = questioner_examples(held or train, model.vocab)
    return hist, questioner_token_error(model, held_ex)


def answerer_error(model, examples, batch_size=512):
    wrong = 0
    for i in range(0, len(examples), batch_size):
        batch = examples[i : i + batch_size]
        logits, _ = model.forward(model.encode_questions([b[0] for b in batch]), np.stack([b[1] for b in batch]))
        wrong += int(np.sum(np.argmax(logits.data, axis=1) != np.array([b[2] for b in batch])))
    return wrong / max(len(examples), 1)


def pretrain_answerer(model, corpus, cfg=PretrainConfig()):
    """3-way cross-entropy against oracle answers. Returns (loss history, held-out error)."""
    train, held = _split(list(corpus), cfg.heldout_fraction)
    ex = answerer_examples(train, model.env_config)
    params = model.policy_parameters()

    def loss_fn(batch):
        logits, _ = model.forward(model.encode_questions([b[0] for b in batch]), np.stack([b[1] for b in batch]))
        return nx.softmax_cross_entropy(logits, [b[2] for b in batch], np.full(len(batch), 1.0 / len(batch))), len(batch)

    hist = _sgd_epochs(params, ex, loss_fn, cfg, "answerer")
    return hist, answerer_error(model, answerer_examples(held or train, model.env_config))


def guesser_examples(corpus):
    return [([(r.question, r.answer) for r in rec.rounds], rec.scene) for rec in corpus]


def guesser_error(model, examples, batch_size=256):
    wrong = 0
    for i in range(0, len(examples), batch_size):
        batch = examples[i : i + batch_size]
        _, ids = model.guess([b[0] for b in batch], [b[1] for b in batch])
        wrong += sum(int(g != b[1].target_id) for g, b in zip(ids, batch))
    return wrong / max(len(examples), 1)


def pretrain_guesser(model, corpus, cfg=PretrainConfig()):
    """Cross-entropy of the guess distribution against the target. Returns (history, held-out error)."""
    train, held = _split(list(corpus), cfg.heldout_fraction)
    ex = guesser_examples(train)

    def loss_fn(batch):
        loss, _, _ = model.loss([b[0] for b in batch], [b[1] for b in batch], np.full(len(batch), 1.0 / len(batch)))
        return loss, len(batch)

    hist = _sgd_epochs(model.parameters(), ex, loss_fn, cfg, "guesser")
    return hist, guesser_error(model, guesser_examples(held or train))


# ---------------------------------------------------------------- rollouts


@dataclass
class QuestionRecord:
    history: list
    target: list
    logps: list


@dataclass
class AnswerRecord:
    question: tuple
    answer: int
    logp: float
    baseline: float


@dataclass
class RewardSignal:
    r: int
    b_q: float
    b_a: list


@dataclass
class Episode:
    """Dialogue state of one self-play game plus everything the updates need."""

    scene: object
    rounds: list = field(default_factory=list)
    stopped: bool = False
    q_records: list = field(default_factory=list)
    a_records: list = field(default_factory=list)
    visible: list = field(default_factory=list)
    report: object = None
    guess: object = None
    guess_id: int | None = None
    reward: int = 0
    forced_failure: bool = False
    seed: object = None

    @property
    def t(self):
        return len(self.rounds)


def episode_rngs(seed, tag, count):
    return [np.random.default_rng((int(seed), *tag, i)) for i in range(count)]


def rollout_batch(agents, scenes, mask, rngs, prune_config=None, rounds=None, history_rounds=None):
    """Self-play a batch of games. Questions use only the most recent rounds as history."""
    q, a, g = agents.questioner, agents.answerer, agents.guesser
    vocab = agents.vocab
    T = rounds or agents.env_config.rounds
    keep = q.model_config.history_rounds if history_rounds is None else history_rounds
    prune_config = prune_config or PruneConfig()
    eps = [Episode(s) for s in scenes]
    tfeat = np.stack([object_features(s, agents.env_config)[s.target_index] for s in scenes])
    live = list(range(len(scenes)))
    for _ in range(T):
        if not live:
            break
        hist = [history_tokens(vocab, eps[i].rounds, keep) for i in live]
        toks, term, lps = q.sample(hist, [scenes[i] for i in live], [rngs[i] for i in live])
        asked = []
        for j, i in enumerate(live):
            target = toks[j] + ([term[j]] if term[j] is not None else [])
            eps[i].q_records.append(QuestionRecord(hist[j], target, lps[j]))
            if term[j] == vocab.stop:
                eps[i].stopped = True
            else:
                asked.append((i, tuple(vocab.decode(toks[j]))))
        if asked:
            idx = [i for i, _ in asked]
            answers, alps, base = a.answer([qq for _, qq in asked], tfeat[idx], [rngs[i] for i in idx])
            for (i, qq), ans, lp, b in zip(asked, answers, alps, base):
                eps[i].rounds.append((qq, ans))
                eps[i].a_records.append(AnswerRecord(qq, ANSWER_INDEX[ans], lp, float(b)))
        live = [i for i in live if not eps[i].stopped]
    for ep in eps:
        if mask.prune:
            pruned, ep.report = prune_dialogue(ep.rounds, prune_config)
            ep.visible = pruned.rounds
            ep.forced_failure = ep.report.forced_failure
        else:
            ep.visible = list(ep.rounds)
    judged = [i for i, ep in enumerate(eps) if not ep.forced_failure]
    if judged:
        probs, ids = g.guess([eps[i].visible for i in judged], [scenes[i] for i in judged])
        for i, p, gid in zip(judged, probs, ids):
            eps[i].guess = p
            eps[i].guess_id = gid
            eps[i].reward = int(gid == scenes[i].target_id)
    return eps


def rollout_episode(agents, scene, mask, rng, prune_config=None):
    """One game; returns (episode, visible dialogue, RewardSignal with b_q unset)."""
    ep = rollout_batch(agents, [scene], mask, [rng], prune_config)[0]
    return ep, ep.visible, RewardSignal(ep.reward, 0.0, [r.baseline for r in ep.a_records])


# ---------------------------------------------------------------- updates


@dataclass
class Baseline:
    """Bias-corrected exponential moving average of batch mean rewards."""

    decay: float = BASELINE_DECAY
    ema: float = 0.0
    count: int = 0

    @property
    def value(self):
        if self.count == 0:
            return 0.0
        return self.ema / (1.0 - self.decay**self.count)

    def update(self, mean_reward):
        self.ema = self.decay * self.ema + (1.0 - self.decay) * mean_reward
        self.count += 1


@dataclass
class UpdateStats:
    mean_reward: float
    b_q: float
    q_loss: float = 0.0
    a_loss: float = 0.0
    score_loss: float = 0.0
    g_loss: float = 0.0
    q_grad_norm: float = 0.0
    a_grad_norm: float = 0.0
    g_grad_norm: float = 0.0


def _check_finite(value, label, epoch, batch):
    if not np.isfinite(value):
        raise TrainingDivergence(f"{label} is not finite", epoch=epoch, batch=batch)


def questioner_policy_loss(model, episodes, b_q):
    """-(1/N) sum_episodes (r - b_q) sum_t log pi_q(q_t | s_t), as a taped scalar."""
    hist, scenes, targets, weights = [], [], [], []
    n = max(len(episodes), 1)
    for ep in episodes:
        adv = (ep.reward - b_q) / n
        for rec in ep.q_records:
            hist.append(rec.history)
            scenes.append(ep.scene)
            targets.append(rec.target)
            weights.append(adv)
    if not targets:
        return None
    loss, _, _, _ = model.nll(hist, scenes, targets, weights)
    return loss


def answerer_policy_loss(model, episodes):
    """REINFORCE loss with score-branch baselines plus the score branch's squared error."""
    qs, feats, acts, adv, rewards = [], [], [], [], []
    n = max(len(episodes), 1)
    for ep in episodes:
        f = object_features(ep.scene, model.env_config)[ep.scene.target_index]
        for rec in ep.a_records:
            qs.append(rec.question)
            feats.append(f)
            acts.append(rec.answer)
            adv.append((ep.reward - rec.baseline) / n)
            rewards.append(ep.reward)
    if not qs:
        return None, None
    logits, z = model.forward(model.encode_questions(qs), np.stack(feats))
    pg = nx.softmax_cross_entropy(logits, acts, adv)
    err = nx.sub(model.score(z), np.array(rewards, dtype=np.float64))
    sq = nx.mul(nx.sum(nx.mul(err, err)), 1.0 / len(qs))
    return pg, sq


def guesser_ce_update(guesser, batch, learning_rate, clip=CLIP_NORM):
    """One Adam step on mean cross-entropy of (dialogue rounds, scene) pairs. Returns (loss, grad norm)."""
    if not batch:
        return 0.0, 0.0
    params = guesser.parameters()
    with nx.Tape() as tape:
        loss, _, _ = guesser.loss([d for d, _ in batch], [s for _, s in batch], np.full(len(batch), 1.0 / len(batch)))
    tape.backward(loss)
    norm = nx.clip_grad_norm(params, clip)
    nx.adam_step(params, learning_rate)
    return loss.item(), norm


def reinforce_update(agents, episodes, mask, baseline, learning_rate, epoch=None, batch=None, clip=CLIP_NORM):
    """Apply the masked updates for one batch of episodes. ``baseline`` is updated after use."""
    if not episodes:
        raise ConfigurationError("reinforce_update needs at least one episode")
    rewards = np.array([ep.reward for ep in episodes], dtype=np.float64)
    stats = UpdateStats(float(rewards.mean()), baseline.value)
    try:
        if mask.tune_q:
            q = agents.questioner
            with nx.Tape() as tape:
                loss = questioner_policy_loss(q, episodes, baseline.value)
            if loss is not None:
                _check_finite(loss.item(), "questioner loss", epoch, batch)
                tape.backward(loss)
                stats.q_loss = loss.item()
                stats.q_grad_norm = nx.clip_grad_norm(q.parameters(), clip)
                nx.adam_step(q.parameters(), learning_rate)
        if mask.tune_a:
            a = agents.answerer
            with nx.Tape() as tape:
                pg, sq = answerer_policy_loss(a, episodes)
            if pg is not None:
                _check_finite(pg.item() + sq.item(), "answerer loss", epoch, batch)
                tape.backward(pg)
                tape.backward(sq)
                stats.a_loss, stats.score_loss = pg.item(), sq.item()
                stats.a_grad_norm = nx.clip_grad_norm(a.parameters(), clip)
                nx.adam_step(a.parameters(), learning_rate)
        if mask.tune_g:
            judged = [(ep.visible, ep.scene) for ep in episodes if not ep.forced_failure]
            stats.g_loss, stats.g_grad_norm = guesser_ce_update(agents.guesser, judged, learning_rate, clip)
    except TrainingDivergence as err:
        if err.epoch is None:
            raise TrainingDivergence(str(err), parameter=err.parameter, epoch=epoch, batch=batch) from err
        raise
    baseline.update(stats.mean_reward)
    return stats


def fit_score_branch(agents, scenes, seed=0, epochs=3, batch_size=64, learning_rate=3e-3):
    """Regress the answerer's score branch on self-play rewards of the current agents.

    Returns (mse, reward variance) on the last pass.
    """
    a = agents.answerer
    mask = TuneMask()
    params = a.score_parameters()
    mse = var = 0.0
    for epoch in range(epochs):
        errs, rs = [], []
        for bi in range(0, len(scenes), batch_size):
            chunk = scenes[bi : bi + batch_size]
            eps = rollout_batch(agents, chunk, mask, episode_rngs(seed, (11, epoch, bi), len(chunk)))
            with nx.Tape() as tape:
                _, sq = answerer_policy_loss(a, eps)
            if sq is None:
                continue
            tape.backward(sq)
            nx.clip_grad_norm(params, CLIP_NORM)
            nx.adam_step(params, learning_rate)
            for ep in eps:
                for rec in ep.a_records:
                    errs.append((rec.baseline - ep.reward) ** 2)
                    rs.append(ep.reward)
        mse, var = float(np.mean(errs)), float(np.var(rs))
    return mse, var


# ---------------------------------------------------------------- interactive loop


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 30
    batches_per_epoch: int = 1
    eval_every: int = 1
    eval_scenes: int = 1000
    eval_seed: int = 0
    eval_prune: bool | None = None
    seed: int = 0


@dataclass
class TrainingStats:
    epoch: int
    mean_reward: float
    success_rate: float | None
    losses: dict
    grad_norms: dict
    drift: dict | None = None

    def to_dict(self):
        return asdict(self)


def train_interactive(agents, config, mask, prune_config=None, on_epoch=None, reference_counts=None):
    """Epochs of self-play batches followed by masked updates.

    ``on_epoch(epoch, stats, report, eval_logs)`` is called after each
    epoch (``report`` and ``eval_logs`` are None between evaluations); the
    CLI uses it to persist logs, reports and checkpoints. ``reference_counts``
    are corpus unigram counts for the vocabulary-divergence metric.
    Returns the list of TrainingStats.
    """
    from .metrics import evaluate

    if not mask.any():
        raise ConfigurationError("train_interactive needs at least one of tune_q / tune_a / tune_g")
    env = agents.env_config
    baseline = Baseline()
    n_train = config.epochs * config.batches_per_epoch * config.batch_size
    train_scenes = scene_stream(config.seed, "rl-train", n_train, env)
    # the held-out set depends only on eval_seed so runs with different seeds stay comparable
    eval_scenes = scene_stream(config.eval_seed, "rl-eval", config.eval_scenes, env) if config.eval_every else []
    series = []
    k = 0
    for epoch in range(1, config.epochs + 1):
        rewards, agg = [], {}
        for b in range(config.batches_per_epoch):
            chunk = train_scenes[k : k + config.batch_size]
            k += config.batch_size
            rngs = episode_rngs(config.seed, (epoch, b), len(chunk))
            eps = rollout_batch(agents, chunk, mask, rngs, prune_config)
            st = reinforce_update(agents, eps, mask, baseline, config.learning_rate, epoch=epoch, batch=b)
            rewards.append(st.mean_reward)
            for key, val in asdict(st).items():
                agg.setdefault(key, []).append(val)
        report = logs = None
        if config.eval_every and (epoch % config.eval_every == 0 or epoch == config.epochs):
            report, logs = evaluate(
                agents, eval_scenes, mask, seed=config.seed, prune_config=prune_config, prune=config.eval_prune,
                reference_counts=reference_counts,
            )
        stats = TrainingStats(
            epoch=epoch,
            mean_reward=float(np.mean(rewards)),
            success_rate=None if report is None else report.success_rate,
            losses={k2: float(np.mean(agg[k2])) for k2 in ("q_loss", "a_loss", "score_loss", "g_loss")},
            grad_norms={k2: float(np.mean(agg[k2])) for k2 in ("q_grad_norm", "a_grad_norm", "g_grad_norm")},
            drift=None if report is None else report.drift(),
        )
        series.append(stats)
        log.info("epoch %d reward %.3f sr %s b_q %.3f", epoch, stats.mean_reward, stats.success_rate, baseline.value)
        if on_epoch is not None:
            on_epoch(epoch, stats, report, logs)
    return series
