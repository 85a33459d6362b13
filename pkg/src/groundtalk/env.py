"""Synthetic object-grounding scenes, a truthful oracle and a scripted questioner.

A scene is a small grid of attributed objects with one hidden target. The
oracle answers templated yes/no questions about the target truthfully; the
scripted questioner asks whichever question best halves the set of objects
still consistent with the answers so far. Together they produce the
supervised corpus the agents are pretrained on.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError

CATEGORY_NAMES = ("ball", "cup", "book", "car", "chair", "lamp", "dog", "tree", "vase", "shoe", "box", "bird")
COLOR_NAMES = ("red", "blue", "green", "yellow", "white", "black", "pink", "brown")
SIZES = ("small", "large")
KIND_ORDER = ("category", "color", "size", "left", "right", "top", "bottom", "row", "column")
FUNCTION_WORDS = ("is", "it", "a", "on", "the", "in", "?")

PAD, START, EOQ, STOP = "<pad>", "<start>", "<eoq>", "<stop>"
SPECIAL_TOKENS = (PAD, START, EOQ, STOP)


class Answer(str, Enum):
    YES = "yes"
    NO = "no"
    NA = "na"


ANSWERS = (Answer.YES, Answer.NO, Answer.NA)


@dataclass(frozen=True)
class EnvConfig:
    grid_w: int = 4
    grid_h: int = 4
    n_obj_min: int = 3
    n_obj_max: int = 8
    n_categories: int = 8
    n_colors: int = 5
    rounds: int = 5

    def validate(self):
        if self.grid_w < 1 or self.grid_h < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.grid_w}x{self.grid_h}")
        if not 1 <= self.n_obj_min <= self.n_obj_max:
            raise ConfigurationError(f"bad object count range {self.n_obj_min}..{self.n_obj_max}")
        if self.n_obj_max > self.grid_w * self.grid_h:
            raise ConfigurationError(
                f"{self.n_obj_max} objects do not fit on a {self.grid_w}x{self.grid_h} grid"
            )
        if not 1 <= self.n_categories <= len(CATEGORY_NAMES):
            raise ConfigurationError(f"n_categories must be in 1..{len(CATEGORY_NAMES)}")
        if not 1 <= self.n_colors <= len(COLOR_NAMES):
            raise ConfigurationError(f"n_colors must be in 1..{len(COLOR_NAMES)}")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        return self

    @property
    def categories(self):
        return CATEGORY_NAMES[: self.n_categories]

    @property
    def colors(self):
        return COLOR_NAMES[: self.n_colors]

    @property
    def feature_dim(self):
        return self.n_categories + self.n_colors + len(SIZES) + 2


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    category: str
    color: str
    size: str
    cell: tuple

    def to_dict(self):
        d = asdict(self)
        d["cell"] = list(self.cell)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["object_id"]), d["category"], d["color"], d["size"], tuple(d["cell"]))


@dataclass(frozen=True)
class Scene:
    objects: tuple
    target_id: int
    grid: tuple

    def __post_init__(self):
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("object ids must be unique within a scene")
        if self.target_id not in ids:
            raise ConfigurationError(f"target {self.target_id} is not an object of the scene")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ConfigurationError("two objects share a cell")
        W, H = self.grid
        for o in self.objects:
            if not (0 <= o.cell[0] < W and 0 <= o.cell[1] < H):
                raise ConfigurationError(f"object {o.object_id} at {o.cell} is outside the {W}x{H} grid")

    @property
    def target(self):
        return self.object(self.target_id)

    @property
    def target_index(self):
        return [o.object_id for o in self.objects].index(self.target_id)

    def object(self, object_id):
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def with_target(self, object_id):
        return Scene(self.objects, object_id, self.grid)

    def permuted(self, order):
        return Scene(tuple(self.objects[i] for i in order), self.target_id, self.grid)

    def to_dict(self):
        return {
            "grid": list(self.grid),
            "objects": [o.to_dict() for o in self.objects],
            "target_id": self.target_id,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ObjectSpec.from_dict(o) for o in d["objects"]), int(d["target_id"]), tuple(d["grid"]))


def object_features(scene, config):
    """(n, feature_dim) matrix: one-hot category, color, size, then x and y scaled to [0, 1]."""
    W, H = scene.grid
    cats, cols = config.categories, config.colors
    F = np.zeros((len(scene.objects), config.feature_dim))
    for i, o in enumerate(scene.objects):
        F[i, cats.index(o.category)] = 1.0
        F[i, len(cats) + cols.index(o.color)] = 1.0
        F[i, len(cats) + len(cols) + SIZES.index(o.size)] = 1.0
        F[i, -2] = o.cell[0] / (W - 1) if W > 1 else 0.0
        F[i, -1] = o.cell[1] / (H - 1) if H > 1 else 0.0
    return F


def generate_scene(rng_seed, config=None):
    """Deterministic scene for a seed (int or sequence of ints)."""
    config = (config or EnvConfig()).validate()
    rng = np.random.default_rng(rng_seed)
    W, H = config.grid_w, config.grid_h
    n = int(rng.integers(config.n_obj_min, config.n_obj_max + 1))
    cells = rng.choice(W * H, size=n, replace=False)
    cats = rng.integers(0, config.n_categories, size=n)
    cols = rng.integers(0, config.n_colors, size=n)
    sizes = rng.integers(0, 2, size=n)
    objects = tuple(
        ObjectSpec(i, config.categories[cats[i]], config.colors[cols[i]], SIZES[sizes[i]], (int(cells[i] % W), int(cells[i] // W)))
        for i in range(n)
    )
    target = int(rng.integers(0, n))
    return Scene(objects, target, (W, H))


def scene_stream(seed, stream, count, config=None):
    """``count`` scenes drawn from a named stream, disjoint from other streams."""
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return [generate_scene((seed, tag, i), config) for i in range(count)]


# ---------------------------------------------------------------- questions


@dataclass(frozen=True)
class QuestionTemplate:
    kind: str
    argument: object = None

    @property
    def token_sequence(self):
        k, a = self.kind, self.argument
        if k == "category":
            return ("is", "it", "a", a, "?")
        if k == "color":
            return ("is", "it", a, "?")
        if k == "size":
            return ("is", "it", "large", "?")
        if k in ("left", "right", "top", "bottom"):
            return ("is", "it", "on", "the", k, "?")
        if k in ("row", "column"):
            return ("is", "it", "in", k, str(a), "?")
        raise ValueError(f"unknown question kind {k!r}")

    @property
    def text(self):
        return " ".join(self.token_sequence)

    def sort_key(self):
        return (KIND_ORDER.index(self.kind), "" if self.argument is None else str(self.argument))


def all_templates(config):
    out = [QuestionTemplate("category", c) for c in config.categories]
    out += [QuestionTemplate("color", c) for c in config.colors]
    out.append(QuestionTemplate("size"))
    out += [QuestionTemplate(k) for k in ("left", "right", "top", "bottom")]
    out += [QuestionTemplate("row", r) for r in range(config.grid_h)]
    out += [QuestionTemplate("column", c) for c in range(config.grid_w)]
    return sorted(out, key=QuestionTemplate.sort_key)


def parse_question(tokens):
    """Exact template match after lowercasing; None when unparseable."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    t = tuple(str(x).lower() for x in tokens)
    n = len(t)
    if n < 4 or t[:2] != ("is", "it") or t[-1] != "?":
        return None
    if n == 5 and t[2] == "a" and t[3] in CATEGORY_NAMES:
        return QuestionTemplate("category", t[3])
    if n == 4 and t[2] in COLOR_NAMES:
        return QuestionTemplate("color", t[2])
    if n == 4 and t[2] == "large":
        return QuestionTemplate("size")
    if n == 6 and t[2:4] == ("on", "the") and t[4] in ("left", "right", "top", "bottom"):
        return QuestionTemplate(t[4])
    if n == 6 and t[2] == "in" and t[3] in ("row", "column") and t[4].isdigit() and t[4] == str(int(t[4])):
        return QuestionTemplate(t[3], int(t[4]))
    return None


def _half(coord, extent, low):
    mid = extent // 2
    if extent % 2 == 1 and coord == mid:
        return Answer.NA
    inside = coord < mid if low else coord >= (mid + extent % 2)
    return Answer.YES if inside else Answer.NO


def oracle_answer(question, scene):
    """Truthful answer about the scene's target. Accepts a template or raw tokens."""
    if not isinstance(question, QuestionTemplate):
        question = parse_question(question)
    if question is None:
        return Answer.NA
    t = scene.target
    k, a = question.kind, question.argument
    W, H = scene.grid
    if k == "category":
        truth = t.category == a
    elif k == "color":
        truth = t.color == a
    elif k == "size":
        truth = t.size == "large"
    elif k == "left":
        return _half(t.cell[0], W, True)
    elif k == "right":
        return _half(t.cell[0], W, False)
    elif k == "top":
        return _half(t.cell[1], H, True)
    elif k == "bottom":
        return _half(t.cell[1], H, False)
    elif k == "row":
        truth = t.cell[1] == a
    elif k == "column":
        truth = t.cell[0] == a
    else:
        return Answer.NA
    return Answer.YES if truth else Answer.NO


def consistent_candidates(scene, rounds):
    """Object ids whose hypothetical answers match every recorded (question, answer)."""
    out = []
    for o in scene.objects:
        hyp = scene.with_target(o.object_id)
        if all(oracle_answer(q, hyp) == Answer(a) for q, a in rounds):
            out.append(o.object_id)
    return out


def consistency_success(scene, rounds):
    """Expected success of guessing uniformly among consistent candidates."""
    cands = consistent_candidates(scene, rounds)
    return 1.0 / len(cands) if scene.target_id in cands else 0.0


def scripted_questioner(scene, history, config=None):
    """Question whose truthful answer best splits the consistent candidates.

    Splitting quality is the size of the largest answer group (smaller is
    better); ties go to the earlier template in kind order. With a single
    candidate left, asks the confirming category question.
    """
    config = config or EnvConfig(grid_w=scene.grid[0], grid_h=scene.grid[1], n_categories=len(CATEGORY_NAMES), n_colors=len(COLOR_NAMES))
    cands = [scene.object(i) for i in consistent_candidates(scene, history)]
    if len(cands) <= 1:
        obj = cands[0] if cands else scene.target
        return QuestionTemplate("category", obj.category)
    best, best_score = None, None
    for q in all_templates(config):
        groups = {}
        for o in cands:
            ans = oracle_answer(q, scene.with_target(o.object_id))
            groups[ans] = groups.get(ans, 0) + 1
        score = max(groups.values())
        if score == len(cands):
            continue
        if best_score is None or score < best_score:
            best, best_score = q, score
    return best


@dataclass
class Dialogue:
    """Ordered (question tokens, answer) rounds; ``stopped`` if the questioner ended early."""

    rounds: list = field(default_factory=list)
    stopped: bool = False

    def questions(self):
        return [q for q, _ in self.rounds]


def scripted_dialogue(scene, config):
    """Scripted questions with oracle answers until one candidate is left or T rounds pass."""
    rounds = []
    for _ in range(config.rounds):
        if rounds and len(consistent_candidates(scene, rounds)) <= 1:
            return Dialogue(rounds, stopped=True)
        q = scripted_questioner(scene, rounds, config)
        rounds.append((q.token_sequence, oracle_answer(q, scene).value))
    return Dialogue(rounds, stopped=False)


def generate_corpus(n_scenes, rounds=None, rng_seed=0, config=None, stream="corpus"):
    """Scripted dialogues for ``n_scenes`` scenes, as DialogueLog records."""
    from .records import DialogueLog

    config = config or EnvConfig()
    if rounds is not None:
        if rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        config = EnvConfig(**{**asdict(config), "rounds": rounds})
    config.validate()
    out = []
    for scene in scene_stream(rng_seed, stream, n_scenes, config):
        d = scripted_dialogue(scene, config)
        out.append(DialogueLog.from_dialogue(scene, d, seed=rng_seed))
    return out


# ---------------------------------------------------------------- vocabulary


class Vocabulary:
    """Token <-> index bijection. File format: one token per line."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("duplicate token in vocabulary")
        for s in (EOQ, STOP, PAD, START):
            if s not in tokens:
                raise ConfigurationError(f"vocabulary lacks {s}")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def for_config(cls, config):
        digits = [str(i) for i in range(max(config.grid_w, config.grid_h))]
        words = list(FUNCTION_WORDS) + ["large", "left", "right", "top", "bottom", "row", "column"]
        return cls(
            list(SPECIAL_TOKENS) + words + digits + list(config.categories) + list(config.colors) + [a.value for a in ANSWERS]
        )

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def encode(self, tokens):
        return [self.index[t] for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    @property
    def pad(self):
        return self.index[PAD]

    @property
    def start(self):
        return self.index[START]

    @property
    def eoq(self):
        return self.index[EOQ]

    @property
    def stop(self):
        return self.index[STOP]

    def text(self):
        return "".join(t + "\n" for t in self.tokens)

    @property
    def hash(self):
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])
