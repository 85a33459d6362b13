"""Question pruning applied before the guesser reads a generated dialogue.

Two heuristics remove unnatural questions: internal repetition of a content
n-gram, and near-duplication of an earlier kept question. If too little of
the dialogue survives, the episode is a forced failure (reward 0).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .env import Dialogue
from .errors import ConfigurationError

FUNCTION_WORDS = frozenset({"is", "it", "a", "the", "in", "on", "?"})
REPETITION = "repetition"
NEAR_DUPLICATE = "near-duplicate"


@dataclass(frozen=True)
class PruneConfig:
    max_ngram_repeats: int = 2
    ngram_sizes: tuple = (1, 2, 3)
    duplicate_overlap_threshold: float = 0.8
    min_kept: int = 1

    def __post_init__(self):
        if self.max_ngram_repeats < 1:
            raise ConfigurationError("max_ngram_repeats must be >= 1")
        if not self.ngram_sizes or min(self.ngram_sizes) < 1:
            raise ConfigurationError("ngram_sizes must be positive integers")
        if not 0.0 <= self.duplicate_overlap_threshold <= 1.0:
            raise ConfigurationError("duplicate_overlap_threshold must lie in [0, 1]")
        if self.min_kept < 0:
            raise ConfigurationError("min_kept must be >= 0")


@dataclass
class PruneReport:
    kept: list = field(default_factory=list)
    removed: list = field(default_factory=list)  # (index, reason, witness)
    forced_failure: bool = False

    def to_dict(self):
        return {
            "kept": list(self.kept),
            "removed": [{"index": i, "reason": r, "witness": w} for i, r, w in self.removed],
            "forced_failure": self.forced_failure,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["kept"]), [(x["index"], x["reason"], x["witness"]) for x in d["removed"]], d["forced_failure"])

    def count(self, reason):
        return sum(1 for _, r, _ in self.removed if r == reason)


def content_tokens(tokens):
    return [t.lower() for t in tokens if t.lower() not in FUNCTION_WORDS]


def detect_repetition(tokens, config=PruneConfig()):
    """(flag, witness). Longer n-grams are reported first, then by first occurrence."""
    words = content_tokens(tokens)
    for n in sorted(config.ngram_sizes, reverse=True):
        grams = [tuple(words[i : i + n]) for i in range(len(words) - n + 1)]
        counts = Counter(grams)
        for g in grams:
            if counts[g] > config.max_ngram_repeats:
                return True, " ".join(g)
    return False, None


def overlap_coefficient(a, b):
    ca, cb = Counter(content_tokens(a)), Counter(content_tokens(b))
    denom = min(sum(ca.values()), sum(cb.values()))
    if denom == 0:
        return 0.0
    return sum((ca & cb).values()) / denom


def detect_near_duplicate(tokens, earlier, config=PruneConfig()):
    """(flag, index into ``earlier`` of the first match)."""
    for j, prev in enumerate(earlier):
        if overlap_coefficient(tokens, prev) >= config.duplicate_overlap_threshold:
            return True, j
    return False, None


def prune_dialogue(dialogue, config=PruneConfig()):
    """Single left-to-right pass; returns (pruned Dialogue, PruneReport).

    Accepts a Dialogue or a list of (question tokens, answer) rounds.
    """
    rounds = dialogue.rounds if isinstance(dialogue, Dialogue) else list(dialogue)
    stopped = dialogue.stopped if isinstance(dialogue, Dialogue) else False
    report = PruneReport()
    kept_questions, kept_idx = [], []
    for i, (q, _) in enumerate(rounds):
        rep, witness = detect_repetition(q, config)
        if rep:
            report.removed.append((i, REPETITION, witness))
            continue
        dup, j = detect_near_duplicate(q, kept_questions, config)
        if dup:
            report.removed.append((i, NEAR_DUPLICATE, kept_idx[j]))
            continue
        kept_questions.append(q)
        kept_idx.append(i)
    report.kept = kept_idx
    report.forced_failure = len(kept_idx) < config.min_kept
    return Dialogue([rounds[i] for i in kept_idx], stopped), report
