"""Run configuration: one JSON document covering every knob of a run.

Values are resolved as command-line flag, then config file, then default. The
resolved config is written to ``config.json`` in the run directory, and reading
that file back reproduces the run.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .agents import ModelConfig
from .env import EnvConfig
from .errors import ConfigurationError
from .pruning import PruneConfig
from .training import PretrainConfig, TrainConfig, TuneMask

CONFIG_FORMAT = "groundtalk.config/1"
HOME_ENV = "GROUNDTALK_HOME"
DEFAULT_HOME = "runs"


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune_config: PruneConfig = field(default_factory=PruneConfig)
    corpus_size: int = 20_000
    tune: str = ""
    prune: bool = False
    seed: int = 0
    output_dir: str | None = None

    def mask(self):
        return TuneMask.parse(self.tune, self.prune)

    def pretrain_config(self):
        return replace(self.pretrain, seed=self.seed)

    def train_config(self):
        return replace(self.train, seed=self.seed)

    def to_dict(self):
        d = {
            "format": CONFIG_FORMAT,
            "env": asdict(self.env),
            "model": asdict(self.model),
            "pretrain": _drop_seed(asdict(self.pretrain)),
            "train": _drop_seed(asdict(self.train)),
            "prune_config": {**asdict(self.prune_config), "ngram_sizes": list(self.prune_config.ngram_sizes)},
            "corpus_size": self.corpus_size,
            "tune": self.tune,
            "prune": self.prune,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        d = dict(d)
        fmt = d.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise ConfigurationError(f"unsupported config format {fmt!r}")
        nested = {"env": EnvConfig, "model": ModelConfig, "pretrain": PretrainConfig, "train": TrainConfig, "prune_config": PruneConfig}
        kw = {}
        for key, value in d.items():
            if key in nested:
                kw[key] = _build(nested[key], value, key)
            elif key in {f.name for f in fields(cls)}:
                kw[key] = value
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        self.env.validate()
        self.mask()
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigurationError(f"seed must be an integer, got {self.seed!r}")
        if self.corpus_size < 1:
            raise ConfigurationError("corpus_size must be >= 1")
        for name, value in (("train.batch_size", self.train.batch_size), ("train.epochs", self.train.epochs),
                            ("train.batches_per_epoch", self.train.batches_per_epoch),
                            ("pretrain.epochs", self.pretrain.epochs), ("pretrain.batch_size", self.pretrain.batch_size)):
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.train.learning_rate <= 0 or self.pretrain.learning_rate <= 0:
            raise ConfigurationError("learning rates must be positive")
        return self


def _drop_seed(d):
    d.pop("seed", None)
    return d


def _build(kind, value, key):
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section {key!r} must be an object")
    known = {f.name for f in fields(kind)}
    bad = set(value) - known
    if bad:
        raise ConfigurationError(f"unknown keys in {key!r}: {sorted(bad)}")
    value = dict(value)
    if "ngram_sizes" in value:
        value["ngram_sizes"] = tuple(value["ngram_sizes"])
    try:
        return kind(**value)
    except TypeError as exc:
        raise ConfigurationError(f"bad section {key!r}: {exc}") from None


def load_config(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None
    return RunConfig.from_dict(data)


def resolve(path=None, **overrides):
    """Defaults, then ``path`` (if given), then non-None ``overrides``.

    Overrides may name top-level fields (seed, tune, prune, corpus_size,
    output_dir) or ``epochs`` / ``scenes``, which map to train.epochs and
    train.eval_scenes.
    """
    cfg = load_config(path) if path else RunConfig()
    epochs = overrides.pop("epochs", None)
    scenes = overrides.pop("scenes", None)
    top = {k: v for k, v in overrides.items() if v is not None}
    if top:
        cfg = replace(cfg, **top)
    if epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
    if scenes is not None:
        cfg = replace(cfg, train=replace(cfg.train, eval_scenes=scenes))
    return cfg.validate()


def output_root():
    return Path(os.environ.get(HOME_ENV, DEFAULT_HOME))


def run_dir(cfg, name=None):
    """The run directory: an explicit name/path, else output_dir, else a seed-named folder under the root."""
    target = name or cfg.output_dir or f"run-seed{cfg.seed}"
    p = Path(target)
    if p.is_absolute() or len(p.parts) > 1 or target.startswith("."):
        return p
    return output_root() / p
