"""Evaluation: task success plus computable proxies for question and answer quality."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import oracle_answer, parse_question
from .errors import ConfigurationError
from .pruning import NEAR_DUPLICATE, REPETITION, PruneConfig, prune_dialogue
from .records import DialogueLog, Round

REPORT_FORMAT = "groundtalk.eval/1"

# Reference values from the original study (real images, human raters); context only.
REFERENCE_SUCCESS_RATE = {
    "SL": 0.417,
    "RL (prior work)": 0.603,
    "Human": 0.844,
    "RL^Q": 0.582,
    "IRL^QA": 0.651,
    "IRL^QG": 0.631,
    "IRL^AG": 0.777,
    "IRL^QAG": 0.829,
    "IRL-prune^QAG": 0.813,
}
REFERENCE_ANSWER_QUALITY = {"SL": 0.780, "RL^Q": 0.915, "IRL^QA": 0.801, "IRL^QG": 0.909, "IRL^AG": 0.408, "IRL^QAG": 0.590, "IRL-prune^QAG": 0.681}

DRIFT_FIELDS = (
    "answer_oracle_agreement",
    "question_parse_rate",
    "repetition_rate",
    "duplicate_rate",
    "na_frequency",
    "vocab_divergence",
)
METRIC_FIELDS = ("success_rate",) + DRIFT_FIELDS


@dataclass
class EvalReport:
    success_rate: float
    answer_oracle_agreement: float
    question_parse_rate: float
    repetition_rate: float
    duplicate_rate: float
    na_frequency: float
    vocab_divergence: float
    n_episodes: int
    n_questions: int = 0
    scene_set: str = ""
    mask: str = ""
    seed: int | None = None
    eval_prune: bool = False
    checkpoints: dict = field(default_factory=dict)

    def drift(self):
        return {k: getattr(self, k) for k in DRIFT_FIELDS}

    def to_dict(self):
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("format", None)
        return cls(**d)


def scene_set_id(scenes):
    h = hashlib.sha256()
    for s in scenes:
        h.update(json.dumps(s.to_dict(), sort_keys=True).encode())
    return h.hexdigest()[:16]


def unigram_counts(questions):
    c = Counter()
    for q in questions:
        c.update(q)
    return c


def smoothed_kl(generated, reference, vocabulary):
    """KL(generated || reference) over ``vocabulary`` with add-one smoothing on both counts."""
    vocab = list(vocabulary)
    p = np.array([generated.get(t, 0) + 1.0 for t in vocab])
    q = np.array([reference.get(t, 0) + 1.0 for t in vocab])
    p /= p.sum()
    q /= q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def dialogue_metrics(logs, reference_counts=None, vocabulary=None, prune_config=None):
    """Drift metrics over the raw (unpruned) questions and answers of DialogueLogs."""
    prune_config = prune_config or PruneConfig()
    n_q = parsed = agree = n_parsed_answers = na = rep = dup = 0
    gen = Counter()
    for lg in logs:
        rounds = [(r.question, r.answer) for r in lg.rounds]
        _, report = prune_dialogue(rounds, prune_config)
        rep += report.count(REPETITION)
        dup += report.count(NEAR_DUPLICATE)
        for q, a in rounds:
            n_q += 1
            gen.update(q)
            na += a == "na"
            tmpl = parse_question(q)
            if tmpl is not None:
                parsed += 1
                n_parsed_answers += 1
                agree += oracle_answer(tmpl, lg.scene).value == a
    out = {
        "answer_oracle_agreement": agree / n_parsed_answers if n_parsed_answers else 1.0,
        "question_parse_rate": parsed / n_q if n_q else 1.0,
        "repetition_rate": rep / n_q if n_q else 0.0,
        "duplicate_rate": dup / n_q if n_q else 0.0,
        "na_frequency": na / n_q if n_q else 0.0,
        "vocab_divergence": 0.0,
        "n_questions": n_q,
    }
    if reference_counts is not None:
        vocabulary = vocabulary or sorted(set(reference_counts) | set(gen))
        out["vocab_divergence"] = smoothed_kl(gen, reference_counts, vocabulary)
    return out


def episode_log(ep, mask, seed=None, checkpoints=None, episode=None):
    rounds = [Round(tuple(q), a) for q, a in ep.rounds]
    if ep.report is not None:
        for i, reason, _ in ep.report.removed:
            rounds[i].pruned = True
            rounds[i].reason = reason
    return DialogueLog(
        scene=ep.scene,
        rounds=rounds,
        stopped=ep.stopped,
        guess=None if ep.guess is None else [float(x) for x in ep.guess],
        guess_id=ep.guess_id,
        reward=int(ep.reward),
        forced_failure=ep.forced_failure,
        mask=mask.to_dict(),
        seed=seed,
        checkpoints=dict(checkpoints or {}),
        prune_report=None if ep.report is None else ep.report.to_dict(),
        episode=episode,
    )


def evaluate(agents, scenes, mask, seed=0, prune_config=None, prune=None, reference_counts=None, checkpoints=None, batch_size=64):
    """Play one multinomially-sampled game per scene and summarise.

    ``prune`` controls whether the guesser reads pruned dialogues (defaults to
    ``mask.prune``). Drift metrics always use the raw generated questions.
    Returns (EvalReport, list of DialogueLog).
    """
    from .training import TuneMask, episode_rngs, rollout_batch

    scenes = list(scenes)
    if not scenes:
        raise ConfigurationError("evaluate needs a non-empty scene set")
    prune = mask.prune if prune is None else prune
    play_mask = TuneMask(mask.tune_q, mask.tune_a, mask.tune_g, prune)
    rngs = episode_rngs(seed, (977,), len(scenes))
    logs = []
    for i in range(0, len(scenes), batch_size):
        eps = rollout_batch(agents, scenes[i : i + batch_size], play_mask, rngs[i : i + batch_size], prune_config)
        logs.extend(episode_log(ep, play_mask, seed, checkpoints, episode=i + j) for j, ep in enumerate(eps))
    report = report_from_logs(logs, reference_counts, agents.vocab.tokens, prune_config)
    report.scene_set = scene_set_id(scenes)
    report.mask = mask.name
    report.seed = seed
    report.eval_prune = prune
    report.checkpoints = dict(checkpoints or {})
    return report, logs


def report_from_logs(logs, reference_counts=None, vocabulary=None, prune_config=None):
    """Recompute an EvalReport from persisted DialogueLogs alone."""
    m = dialogue_metrics(logs, reference_counts, vocabulary, prune_config)
    return EvalReport(
        success_rate=float(np.mean([lg.reward for lg in logs])) if logs else 0.0,
        n_episodes=len(logs),
        **m,
    )


def _symbolic_guess(scene, rounds):
    from .env import consistent_candidates

    cands = consistent_candidates(scene, rounds)
    return cands[0] if cands else scene.objects[0].object_id


def evaluate_symbolic(scenes, config, seed=0):
    """Scripted questioner + oracle answerer + consistency-filter guesser.

    The filter guesses the lowest-id consistent object. Returns (EvalReport, logs).
    """
    from .env import scripted_dialogue

    logs = []
    for i, scene in enumerate(scenes):
        d = scripted_dialogue(scene, config)
        gid = _symbolic_guess(scene, d.rounds)
        logs.append(
            DialogueLog(
                scene=scene,
                rounds=[Round(tuple(q), a) for q, a in d.rounds],
                stopped=d.stopped,
                guess_id=gid,
                reward=int(gid == scene.target_id),
                seed=seed,
                episode=i,
            )
        )
    report = report_from_logs(logs)
    report.scene_set = scene_set_id(scenes)
    report.mask = "symbolic"
    report.seed = seed
    return report, logs


# ---------------------------------------------------------------- comparison


@dataclass
class Comparison:
    table: dict  # run name -> metric -> (mean, std, n)
    flags: dict  # (a, b) -> metric -> -1 / 0 / +1  (sign of a - b when beyond 2 sigma)

    def to_dict(self):
        return {
            "table": {k: {m: list(v) for m, v in row.items()} for k, row in self.table.items()},
            "flags": {f"{a}|{b}": row for (a, b), row in self.flags.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def render(self, metrics=METRIC_FIELDS):
        names = list(self.table)
        width = max(12, *(len(n) for n in names)) + 2
        head = "run".ljust(width) + "".join(m[:18].rjust(20) for m in metrics)
        lines = [head, "-" * len(head)]
        for n in names:
            cells = "".join(f"{self.table[n][m][0]:.3f}±{self.table[n][m][1]:.3f}".rjust(20) for m in metrics)
            lines.append(n.ljust(width) + cells)
        flagged = [
            f"{a} vs {b}: {m} {'+' if s > 0 else '-'}"
            for (a, b), row in self.flags.items()
            for m, s in row.items()
            if s
        ]
        lines.append("")
        lines.append("significant differences (2 sigma): " + ("none" if not flagged else ""))
        lines.extend("  " + f for f in flagged)
        return "\n".join(lines) + "\n"


def compare_runs(reports, metrics=METRIC_FIELDS, min_seeds=1):
    """Summarise reports keyed by run name (each a list over seeds) and flag 2-sigma differences."""
    if len(reports) < 2:
        raise ConfigurationError("compare_runs needs at least two runs")
    scene_sets = {r.scene_set for rs in reports.values() for r in rs}
    if len(scene_sets) > 1:
        raise ConfigurationError(f"reports were computed on different scene sets: {sorted(scene_sets)}")
    table = {}
    for name, rs in reports.items():
        if len(rs) < min_seeds:
            raise ConfigurationError(f"{name}: {len(rs)} seeds, need at least {min_seeds}")
        row = {}
        for m in metrics:
            v = np.array([getattr(r, m) for r in rs], dtype=float)
            row[m] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0, len(v))
        table[name] = row
    flags = {}
    names = list(table)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            row = {}
            for m in metrics:
                ma, sa, na_ = table[a][m]
                mb, sb, nb = table[b][m]
                diff = ma - mb
                se = np.sqrt(sa**2 / na_ + sb**2 / nb)
                row[m] = int(np.sign(diff)) if abs(diff) > 2.0 * se and diff != 0 else 0
            flags[(a, b)] = row
    return Comparison(table, flags)
