"""The three parametric agents: questioner, answerer (with a reward-estimating
score branch) and guesser.

All forward passes are batched. Without an active Tape they run as plain
numpy evaluation (rollouts); inside a Tape they record for backward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nx
from .env import ANSWERS, Answer, EnvConfig, Vocabulary, object_features
from .errors import ConfigurationError
from .numeric.checkpoint import load_checkpoint, save_checkpoint
from .numeric.tensor import Tensor

MAX_QUESTION_LEN = 12
RL_HISTORY_ROUNDS = 2
INIT_SCALE = 0.08
ANSWER_INDEX = {a.value: i for i, a in enumerate(ANSWERS)}


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    embedding: int = 32
    max_question_len: int = MAX_QUESTION_LEN
    history_rounds: int = RL_HISTORY_ROUNDS


class Module:
    kind = "module"

    def __init__(self, vocab, env_config, model_config, seed):
        self.vocab = vocab
        self.env_config = env_config
        self.model_config = model_config
        self.params = {}
        self._rng = np.random.default_rng(seed)

    def _weight(self, name, *shape):
        p = nx.ParameterBlock(f"{self.kind}.{name}", self._rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape))
        self.params[name] = p
        return p

    def _bias(self, name, n):
        p = nx.ParameterBlock(f"{self.kind}.{name}", np.zeros(n))
        self.params[name] = p
        return p

    def _gru(self, name, n_in, n_hidden):
        self._weight(f"{name}.W", n_in, 3 * n_hidden)
        self._weight(f"{name}.U", n_hidden, 3 * n_hidden)
        self._bias(f"{name}.b", 3 * n_hidden)

    def parameters(self):
        return list(self.params.values())

    def header(self):
        return {
            "model": self.kind,
            "hidden": self.model_config.hidden,
            "embedding": self.model_config.embedding,
            "max_question_len": self.model_config.max_question_len,
            "history_rounds": self.model_config.history_rounds,
            "vocab_hash": self.vocab.hash,
            "env": self.env_config.__dict__,
        }

    def save(self, path):
        return save_checkpoint(path, [(k, p.data) for k, p in self.params.items()], self.header())

    def load_state(self, blocks):
        for k, p in self.params.items():
            if k not in blocks or blocks[k].shape != p.data.shape:
                raise ConfigurationError(f"checkpoint block {k!r} missing or mis-shaped")
            p.data[...] = blocks[k]

    @classmethod
    def load(cls, path, vocab):
        header, blocks = load_checkpoint(path, expect_vocab_hash=vocab.hash)
        if header.get("model") != cls.kind:
            raise ConfigurationError(f"{path} holds a {header.get('model')} checkpoint, not {cls.kind}")
        mc = ModelConfig(header["hidden"], header["embedding"], header["max_question_len"], header["history_rounds"])
        model = cls(vocab, EnvConfig(**header["env"]), mc, seed=0)
        model.load_state(blocks)
        return model

    def state_bytes(self):
        return b"".join(p.data.tobytes() for p in self.params.values())

    # ---- shared pieces

    def _encode(self, prefix, emb, seqs):
        """Run a recurrent encoder over padded token sequences, return final states (B, H)."""
        B = len(seqs)
        H = self.model_config.hidden
        h = Tensor(np.zeros((B, H)))
        if B == 0:
            return h
        T = max((len(s) for s in seqs), default=0)
        if T == 0:
            return h
        ids = np.full((B, T), self.vocab.pad, dtype=np.int64)
        lens = np.array([len(s) for s in seqs])
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
        W, U, b = self.params[f"{prefix}.W"], self.params[f"{prefix}.U"], self.params[f"{prefix}.b"]
        x_all = nx.embedding_lookup(emb, ids)  # (B, T, E)
        for t in range(T):
            m = (lens > t).astype(np.float64)
            x = _column(x_all, t)
            h = nx.recurrent_cell(h, x, W, U, b, mask=m)
        return h

    def _objects(self, scenes):
        """Padded object features (B, n_max, F) and validity mask."""
        feats = [object_features(s, self.env_config) for s in scenes]
        n_max = max(f.shape[0] for f in feats)
        F = np.zeros((len(scenes), n_max, self.env_config.feature_dim))
        mask = np.zeros((len(scenes), n_max), dtype=bool)
        for i, f in enumerate(feats):
            F[i, : f.shape[0]] = f
            mask[i, : f.shape[0]] = True
        return F, mask


def _column(x, t):
    """x[:, t, :] as a taped op."""
    B, T, E = x.data.shape
    flat = nx.reshape(x, (B * T, E))
    return nx.take_rows(flat, np.arange(B) * T + t)


def history_tokens(vocab, rounds, truncate=None):
    """Flatten (question tokens, answer) rounds into ids, keeping the last ``truncate`` rounds."""
    if truncate is not None:
        rounds = rounds[-truncate:] if truncate > 0 else []
    out = []
    for q, a in rounds:
        out.extend(vocab.index[t] for t in q if t in vocab.index)
        out.append(vocab.index[Answer(a).value])
    return out


class QuestionerModel(Module):
    """History encoder + global dot attention over objects + recurrent decoder."""

    kind = "questioner"

    def __init__(self, vocab, env_config=None, model_config=None, seed=0):
        super().__init__(vocab, env_config or EnvConfig(), model_config or ModelConfig(), seed)
        V, E, H, F = len(vocab), self.model_config.embedding, self.model_config.hidden, self.env_config.feature_dim
        self._weight("emb", V, E)
        self._gru("enc", E, H)
        self._weight("obj.W", F, H)
        self._bias("obj.b", H)
        self._weight("init.W", 2 * H, H)
        self._bias("init.b", H)
        self._gru("dec", E, H)
        self._weight("out.W", 2 * H, V)
        self._bias("out.b", V)
        self.output_mask = np.ones(V, dtype=bool)
        self.output_mask[[vocab.pad, vocab.start]] = False

    def context(self, histories, scenes):
        """Encoded history, attention context over objects, and the decoder's initial state."""
        p = self.params
        h_enc = self._encode("enc", p["emb"], histories)
        F, mask = self._objects(scenes)
        keys = nx.tanh(nx.linear(Tensor(F), p["obj.W"], p["obj.b"]))
        ctx, weights = nx.dot_attention(h_enc, keys, keys, mask)
        s0 = nx.tanh(nx.linear(nx.concat([h_enc, ctx]), p["init.W"], p["init.b"]))
        return h_enc, ctx, s0, weights

    def step(self, s, ctx, prev_ids, mask=None):
        p = self.params
        x = nx.embedding_lookup(p["emb"], prev_ids)
        s = nx.recurrent_cell(s, x, p["dec.W"], p["dec.U"], p["dec.b"], mask=mask)
        logits = nx.linear(nx.concat([s, ctx]), p["out.W"], p["out.b"])
        return s, logits

    def nll(self, histories, scenes, targets, weights=None):
        """Teacher-forced, per-example-weighted negative log-likelihood of target sequences.

        Returns (loss Tensor, per-example log-likelihood array, token errors, token count).
        """
        B = len(targets)
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
        _, ctx, s, _ = self.context(histories, scenes)
        T = max(len(t) for t in targets)
        lens = np.array([len(t) for t in targets])
        prev = np.full(B, self.vocab.start)
        loss = None
        loglik = np.zeros(B)
        errors = 0
        omask = np.broadcast_to(self.output_mask, (B, len(self.vocab)))
        for t in range(T):
            active = lens > t
            cur = np.array([tg[t] if t < len(tg) else self.vocab.pad for tg in targets])
            s, logits = self.step(s, ctx, prev, mask=active.astype(np.float64))
            step_loss = nx.softmax_cross_entropy(logits, np.where(active, cur, self.vocab.eoq), w * active, omask)
            loss = step_loss if loss is None else nx.add(loss, step_loss)
            lp = _log_probs(logits.data, self.output_mask)
            rows = np.arange(B)
            loglik += np.where(active, lp[rows, np.where(active, cur, 0)], 0.0)
            errors += int(np.sum(active & (np.argmax(np.where(self.output_mask, logits.data, -np.inf), axis=1) != cur)))
            prev = np.where(active, cur, self.vocab.pad)
        return loss, loglik, errors, int(lens.sum())

    def sample(self, histories, scenes, rngs, greedy=False):
        """Multinomial decoding for a batch. Returns per-example (token ids, terminator id or None, log-probs)."""
        B = len(histories)
        L = self.model_config.max_question_len
        _, ctx, s, _ = self.context(histories, scenes)
        prev = np.full(B, self.vocab.start)
        done = np.zeros(B, dtype=bool)
        toks = [[] for _ in range(B)]
        logps = [[] for _ in range(B)]
        term = [None] * B
        for _ in range(L):
            s, logits = self.step(s, ctx, prev)
            lp = _log_probs(logits.data, self.output_mask)
            nxt = np.empty(B, dtype=np.int64)
            for i in range(B):
                if done[i]:
                    nxt[i] = self.vocab.pad
                    continue
                k = int(np.argmax(lp[i])) if greedy else _draw(np.exp(lp[i]), rngs[i])
                nxt[i] = k
                logps[i].append(float(lp[i, k]))
                if k in (self.vocab.eoq, self.vocab.stop):
                    term[i] = k
                    done[i] = True
                else:
                    toks[i].append(k)
            prev = nxt
            if done.all():
                break
        return toks, term, logps


class AnswererModel(Module):
    """Question encoder + target projection -> yes/no/na head, plus a rectified score branch."""

    kind = "answerer"

    def __init__(self, vocab, env_config=None, model_config=None, seed=0):
        super().__init__(vocab, env_config or EnvConfig(), model_config or ModelConfig(), seed)
        V, E, H, F = len(vocab), self.model_config.embedding, self.model_config.hidden, self.env_config.feature_dim
        self._weight("emb", V, E)
        self._gru("qenc", E, H)
        self._weight("feat.W", F, H)
        self._bias("feat.b", H)
        self._weight("comb.W", 2 * H, H)
        self._bias("comb.b", H)
        self._weight("head.W", H, len(ANSWERS))
        self._bias("head.b", len(ANSWERS))
        self._weight("score.W", H, 1)
        # rewards lie in [0, 1]; starting the bias at their midpoint keeps the
        # rectifier active after pretraining has moved z around
        self._bias("score.b", 1).data[:] = 0.5

    def policy_parameters(self):
        return [p for k, p in self.params.items() if not k.startswith("score.")]

    def score_parameters(self):
        return [self.params["score.W"], self.params["score.b"]]

    def forward(self, questions, target_features):
        """Answer logits (B, 3) and the hidden state the score branch reads."""
        p = self.params
        hq = self._encode("qenc", p["emb"], questions)
        f = nx.tanh(nx.linear(Tensor(target_features), p["feat.W"], p["feat.b"]))
        z = nx.tanh(nx.linear(nx.concat([hq, f]), p["comb.W"], p["comb.b"]))
        return nx.linear(z, p["head.W"], p["head.b"]), z

    def score(self, z):
        """Reward estimate b_a >= 0. Reads z without passing gradient back into it."""
        p = self.params
        return nx.reshape(nx.relu(nx.linear(Tensor(z.data), p["score.W"], p["score.b"])), (-1,))

    def encode_questions(self, questions):
        return [[self.vocab.index[t] for t in q if t in self.vocab.index] for q in questions]

    def answer(self, questions, target_features, rngs, greedy=False):
        """Sample answers. Returns (answers, log-probs, score-branch values)."""
        logits, z = self.forward(self.encode_questions(questions), target_features)
        lp = _log_probs(logits.data)
        b = self.score(z).data
        out, lps = [], []
        for i in range(len(questions)):
            k = int(np.argmax(lp[i])) if greedy else _draw(np.exp(lp[i]), rngs[i])
            out.append(ANSWERS[k].value)
            lps.append(float(lp[i, k]))
        return out, lps, b


class GuesserModel(Module):
    """Scores every object against a pooled, answer-gated encoding of the dialogue."""

    kind = "guesser"

    def __init__(self, vocab, env_config=None, model_config=None, seed=0):
        super().__init__(vocab, env_config or EnvConfig(), model_config or ModelConfig(), seed)
        V, E, H, F = len(vocab), self.model_config.embedding, self.model_config.hidden, self.env_config.feature_dim
        self._weight("emb", V, E)
        self._gru("renc", E, H)
        self._weight("ans", len(ANSWERS), H)
        self._weight("dial.W", H, H)
        self._bias("dial.b", H)
        self._weight("obj1.W", F, H)
        self._bias("obj1.b", H)
        self._weight("obj2.W", H, H)
        self._bias("obj2.b", H)

    def logits(self, dialogues, scenes):
        """Per-object logits (B, n_max) and the object mask. ``dialogues``: lists of (tokens, answer)."""
        p = self.params
        B = len(dialogues)
        H = self.model_config.hidden
        flat_q, flat_a, owner = [], [], []
        for i, d in enumerate(dialogues):
            for q, a in d:
                flat_q.append([self.vocab.index[t] for t in q if t in self.vocab.index])
                flat_a.append(ANSWER_INDEX[Answer(a).value])
                owner.append(i)
        if flat_q:
            hr = self._encode("renc", p["emb"], flat_q)
            gate = nx.tanh(nx.embedding_lookup(p["ans"], flat_a))
            rounds = nx.mul(hr, gate)
            pool = np.zeros((B, len(flat_q)))
            pool[owner, np.arange(len(flat_q))] = 1.0
            pooled = nx.matmul(Tensor(pool), rounds)
        else:
            pooled = Tensor(np.zeros((B, H)))
        query = nx.linear(pooled, p["dial.W"], p["dial.b"])
        F, mask = self._objects(scenes)
        o = nx.tanh(nx.linear(Tensor(F), p["obj1.W"], p["obj1.b"]))
        o = nx.tanh(nx.linear(o, p["obj2.W"], p["obj2.b"]))
        return nx.rowdot(o, query), mask

    def loss(self, dialogues, scenes, weights=None):
        """Summed cross-entropy against each scene's target (the guesser's training loss)."""
        logits, mask = self.logits(dialogues, scenes)
        targets = np.array([s.target_index for s in scenes])
        return nx.softmax_cross_entropy(logits, targets, weights, mask), logits, mask

    def guess(self, dialogues, scenes):
        """Probability vectors over each scene's objects and the argmax object ids."""
        logits, mask = self.logits(dialogues, scenes)
        probs = nx.softmax(logits, mask).data
        out_p, out_id = [], []
        for i, s in enumerate(scenes):
            pr = probs[i, : len(s.objects)]
            out_p.append(pr)
            out_id.append(s.objects[int(np.argmax(pr))].object_id)
        return out_p, out_id


def _log_probs(z, mask=None):
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zs = z - z.max(axis=-1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))


def _draw(p, rng):
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(k, len(p) - 1)


def build_models(env_config=None, model_config=None, seed=0, vocab=None):
    env_config = env_config or EnvConfig()
    vocab = vocab or Vocabulary.for_config(env_config)
    return (
        QuestionerModel(vocab, env_config, model_config, seed=(seed, 1)),
        AnswererModel(vocab, env_config, model_config, seed=(seed, 2)),
        GuesserModel(vocab, env_config, model_config, seed=(seed, 3)),
    )
