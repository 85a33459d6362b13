"""DialogueLog: the persisted record of one episode (or one corpus dialogue).

One JSON object per line. Keys are written sorted so identical episodes give
identical bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .env import Dialogue, Scene

LOG_FORMAT = "groundtalk.dialogue/1"


@dataclass
class Round:
    question: tuple
    answer: str
    pruned: bool = False
    reason: str | None = None

    def to_dict(self):
        return {"question": list(self.question), "answer": self.answer, "pruned": self.pruned, "reason": self.reason}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["question"]), d["answer"], bool(d.get("pruned", False)), d.get("reason"))


@dataclass
class DialogueLog:
    scene: Scene
    rounds: list
    stopped: bool = False
    guess: list | None = None
    guess_id: int | None = None
    reward: int | None = None
    forced_failure: bool = False
    mask: dict | None = None
    seed: object = None
    checkpoints: dict = field(default_factory=dict)
    prune_report: dict | None = None
    role: str | None = None
    episode: int | None = None

    @classmethod
    def from_dialogue(cls, scene, dialogue, **kw):
        rounds = [Round(tuple(q), str(a)) for q, a in dialogue.rounds]
        return cls(scene, rounds, stopped=dialogue.stopped, **kw)

    def dialogue(self, kept_only=False):
        rounds = [(r.question, r.answer) for r in self.rounds if not (kept_only and r.pruned)]
        return Dialogue(rounds, self.stopped)

    def to_dict(self):
        return {
            "format": LOG_FORMAT,
            "scene": self.scene.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
            "stopped": self.stopped,
            "guess": self.guess,
            "guess_id": self.guess_id,
            "reward": self.reward,
            "forced_failure": self.forced_failure,
            "mask": self.mask,
            "seed": self.seed,
            "checkpoints": self.checkpoints,
            "prune_report": self.prune_report,
            "role": self.role,
            "episode": self.episode,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        fmt = d.get("format")
        if fmt != LOG_FORMAT:
            raise ValueError(f"unsupported dialogue log format {fmt!r}")
        return cls(
            scene=Scene.from_dict(d["scene"]),
            rounds=[Round.from_dict(r) for r in d["rounds"]],
            stopped=bool(d.get("stopped", False)),
            guess=d.get("guess"),
            guess_id=d.get("guess_id"),
            reward=d.get("reward"),
            forced_failure=bool(d.get("forced_failure", False)),
            mask=d.get("mask"),
            seed=d.get("seed"),
            checkpoints=d.get("checkpoints") or {},
            prune_report=d.get("prune_report"),
            role=d.get("role"),
            episode=d.get("episode"),
        )

    @classmethod
    def from_json(cls, line):
        return cls.from_dict(json.loads(line))


def write_jsonl(path, logs):
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(log.to_json())
            fh.write("\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [DialogueLog.from_json(line) for line in fh if line.strip()]
