"""Run directories: config snapshot, vocabulary, checkpoints, logs and reports.

Layout::

    config.json
    vocab.txt
    corpus.jsonl
    checkpoints/{model}.{epoch}.ckpt     epoch 0 holds the pretrained weights
    logs/epoch_{n}.jsonl                 evaluation episodes
    reports/eval_{n}.json

Every DialogueLog names the checkpoint files (path relative to the run
directory plus sha256) that produced it, so its reward can be replayed.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

from .agents import AnswererModel, GuesserModel, QuestionerModel
from .config import RunConfig, load_config
from .env import Vocabulary
from .errors import CheckpointError, MissingCheckpoint
from .numeric.checkpoint import file_digest
from .records import read_jsonl, write_jsonl
from .training import Agents

MODELS = {"questioner": QuestionerModel, "answerer": AnswererModel, "guesser": GuesserModel}
_CKPT = re.compile(r"^(questioner|answerer|guesser)\.(\d+)\.ckpt$")


class RunDir:
    def __init__(self, path):
        self.path = Path(path)

    # ---- paths

    @property
    def config_path(self):
        return self.path / "config.json"

    @property
    def vocab_path(self):
        return self.path / "vocab.txt"

    @property
    def corpus_path(self):
        return self.path / "corpus.jsonl"

    def checkpoint_path(self, model, epoch):
        return self.path / "checkpoints" / f"{model}.{epoch}.ckpt"

    def log_path(self, tag):
        return self.path / "logs" / f"epoch_{tag}.jsonl"

    def report_path(self, tag):
        return self.path / "reports" / f"eval_{tag}.json"

    def create(self):
        for sub in ("checkpoints", "logs", "reports"):
            (self.path / sub).mkdir(parents=True, exist_ok=True)
        return self

    def clear_training(self):
        """Remove checkpoints after epoch 0 and all epoch logs/reports, so a restarted run starts clean."""
        for f in (self.path / "checkpoints").glob("*.ckpt"):
            m = _CKPT.match(f.name)
            if m and int(m.group(2)) > 0:
                f.unlink()
        for pattern in ("logs/epoch_*.jsonl", "reports/eval_*.json", "reports/best.json", "reports/training.json"):
            for f in self.path.glob(pattern):
                f.unlink()

    # ---- config / vocab

    def write_config(self, cfg):
        self.create()
        self.config_path.write_text(cfg.to_json())

    def read_config(self):
        if not self.config_path.exists():
            raise MissingCheckpoint(f"no config.json in run directory {self.path}")
        return load_config(self.config_path)

    def write_vocab(self, vocab):
        self.create()
        vocab.save(self.vocab_path)

    def read_vocab(self):
        if not self.vocab_path.exists():
            raise MissingCheckpoint(f"no vocab.txt in run directory {self.path}")
        return Vocabulary.load(self.vocab_path)

    # ---- checkpoints

    def epochs(self, model):
        d = self.path / "checkpoints"
        if not d.is_dir():
            return []
        out = []
        for f in d.iterdir():
            m = _CKPT.match(f.name)
            if m and m.group(1) == model:
                out.append(int(m.group(2)))
        return sorted(out)

    def latest(self, model, upto=None):
        eps = [e for e in self.epochs(model) if upto is None or e <= upto]
        if not eps:
            where = f" at or before epoch {upto}" if upto is not None else ""
            raise MissingCheckpoint(f"no {model} checkpoint{where} in {self.path / 'checkpoints'}")
        return eps[-1]

    def checkpoint_id(self, model, epoch):
        p = self.checkpoint_path(model, epoch)
        return {"file": str(p.relative_to(self.path)), "sha256": file_digest(p)}

    def save_model(self, name, model, epoch):
        self.create()
        model.save(self.checkpoint_path(name, epoch))
        return self.checkpoint_id(name, epoch)

    def save_agents(self, agents, epoch, models=tuple(MODELS)):
        """Write checkpoints for ``models``; others are referenced at their latest epoch."""
        ids = {}
        for name in MODELS:
            if name in models:
                ids[name] = self.save_model(name, getattr(agents, name), epoch)
            else:
                ids[name] = self.checkpoint_id(name, self.latest(name, epoch))
        return ids

    def load_agents(self, epoch=None, vocab=None):
        """Agents from the newest checkpoint of each model at or before ``epoch``."""
        vocab = vocab or self.read_vocab()
        loaded, ids = {}, {}
        for name, cls in MODELS.items():
            e = self.latest(name, epoch)
            loaded[name] = cls.load(self.checkpoint_path(name, e), vocab)
            ids[name] = self.checkpoint_id(name, e)
        return Agents(**loaded), ids

    # ---- logs / reports

    def write_logs(self, tag, logs):
        self.create()
        write_jsonl(self.log_path(tag), logs)

    def write_report(self, tag, report):
        self.create()
        self.report_path(tag).write_text(report.to_json())

    def read_report(self, tag):
        from .metrics import EvalReport

        p = self.report_path(tag)
        if not p.exists():
            raise MissingCheckpoint(f"no report {p}")
        return EvalReport.from_dict(json.loads(p.read_text()))

    def final_report(self):
        """The report of the highest numbered epoch."""
        d = self.path / "reports"
        tags = sorted(int(m.group(1)) for f in d.glob("eval_*.json") if (m := re.match(r"eval_(\d+)\.json$", f.name)))
        if not tags:
            raise MissingCheckpoint(f"no evaluation reports in {d}")
        return self.read_report(tags[-1])


def new_run(path, cfg: RunConfig, vocab):
    run = RunDir(path).create()
    run.write_config(cfg)
    run.write_vocab(vocab)
    return run


# ---------------------------------------------------------------- replay


def replay_reward(log, root, cache=None):
    """Recompute a logged episode's reward through the guesser checkpoint it references.

    ``root`` is the run directory the checkpoint paths are relative to.
    """
    if log.forced_failure:
        return 0
    ref = (log.checkpoints or {}).get("guesser")
    if not ref:
        raise CheckpointError("log does not reference a guesser checkpoint")
    path = Path(root) / ref["file"]
    cache = {} if cache is None else cache
    if path not in cache:
        if not path.exists():
            raise MissingCheckpoint(f"checkpoint not found: {path}")
        if file_digest(path) != ref["sha256"]:
            raise CheckpointError(f"{path} does not match the digest recorded in the log")
        cache[path] = GuesserModel.load(path, RunDir(root).read_vocab())
    _, ids = cache[path].guess([log.dialogue(kept_only=True).rounds], [log.scene])
    return int(ids[0] == log.scene.target_id)


def replay_file(log_path, root=None):
    """(number of logs, number whose replayed reward differs from the logged one)."""
    root = Path(root) if root else Path(log_path).parent.parent
    cache = {}
    logs = read_jsonl(log_path)
    bad = sum(replay_reward(lg, root, cache) != lg.reward for lg in logs)
    return len(logs), bad
