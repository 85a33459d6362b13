"""Finite-difference gradient checks for every layer and every supervised loss.

Used by ``groundtalk gradcheck`` and by the test suite. Affine, softmax and
cross-entropy layers are checked at 1e-6; recurrent, attention and full
model losses at 1e-4.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nx
from .agents import ModelConfig, build_models
from .env import EnvConfig, generate_corpus
from .numeric import Tensor
from .training import answerer_examples, guesser_examples, questioner_examples

TIGHT = 1e-6
LOOSE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    seeds: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def line(self):
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<28} seeds={self.seeds:<3} max_rel_err={self.max_rel_error:.2e} tol={self.tolerance:.0e}"


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _affine(rng):
    x, W, b = _leaf(rng, 4, 5), _leaf(rng, 5, 3), _leaf(rng, 3)
    w = rng.normal(size=(4, 3))
    return lambda: nx.sum(nx.mul(nx.linear(x, W, b), w)), [x, W, b]


def _softmax(rng):
    x = _leaf(rng, 3, 6)
    w = rng.normal(size=(3, 6))
    mask = np.ones((3, 6), dtype=bool)
    mask[0, 4:] = False
    return lambda: nx.sum(nx.mul(nx.softmax(x, mask), w)), [x]


def _cross_entropy(rng):
    x = _leaf(rng, 5)
    k = int(rng.integers(5))
    return lambda: nx.cross_entropy(nx.softmax(x), k), [x]


def _fused_xent(rng):
    x = _leaf(rng, 4, 7)
    targets = rng.integers(0, 7, size=4)
    weights = rng.uniform(0.1, 1.0, size=4)
    return lambda: nx.softmax_cross_entropy(x, targets, weights), [x]


def _recurrent(rng):
    H, E, B, T = 4, 3, 2, 5
    W, U, b = _leaf(rng, E, 3 * H, scale=0.5), _leaf(rng, H, 3 * H, scale=0.5), _leaf(rng, 3 * H, scale=0.5)
    xs = _leaf(rng, T, B, E)
    h0 = _leaf(rng, B, H, scale=0.5)
    masks = (rng.random((T, B)) < 0.8).astype(np.float64)
    w = rng.normal(size=(B, H))

    def f():
        h = h0
        for t in range(T):
            h = nx.recurrent_cell(h, nx.take_rows(nx.reshape(xs, (T * B, E)), np.arange(B) + t * B), W, U, b, mask=masks[t])
        return nx.sum(nx.mul(h, w))

    return f, [W, U, b, xs, h0]


def _attention(rng):
    q, k, v = _leaf(rng, 2, 4), _leaf(rng, 2, 5, 4), _leaf(rng, 2, 5, 4)
    mask = np.ones((2, 5), dtype=bool)
    mask[1, 3:] = False
    w = rng.normal(size=(2, 4))
    return lambda: nx.sum(nx.mul(nx.dot_attention(q, k, v, mask)[0], w)), [q, k, v]


def _tiny_models(seed):
    env = EnvConfig()
    mc = ModelConfig(hidden=6, embedding=5)
    q, a, g = build_models(env, mc, seed=seed)
    rng = np.random.default_rng((seed, 77))
    for m in (q, a, g):
        for p in m.parameters():
            p.data[...] = rng.uniform(-0.5, 0.5, size=p.data.shape)
    corpus = generate_corpus(2, rng_seed=seed, config=env)
    return q, a, g, corpus


def _questioner_loss(q, corpus):
    ex = questioner_examples(corpus, q.vocab)[:3]
    w = np.full(len(ex), 1.0 / len(ex))
    return lambda: q.nll([e[0] for e in ex], [e[1] for e in ex], [e[2] for e in ex], w)[0]


def _answerer_loss(a, corpus):
    ex = answerer_examples(corpus, a.env_config)[:4]
    qs = a.encode_questions([e[0] for e in ex])
    feats = np.stack([e[1] for e in ex])
    targets = [e[2] for e in ex]
    rewards = np.linspace(0.2, 1.0, len(ex))

    def f():
        logits, z = a.forward(qs, feats)
        err = nx.sub(nx.linear(z, a.params["score.W"], a.params["score.b"]), rewards[:, None])
        return nx.add(nx.softmax_cross_entropy(logits, targets), nx.mean(nx.mul(err, err)))

    return f


def _guesser_loss(g, corpus):
    ex = guesser_examples(corpus)
    return lambda: g.loss([e[0] for e in ex], [e[1] for e in ex])[0]


LAYERS = (
    ("affine", _affine, TIGHT),
    ("softmax", _softmax, TIGHT),
    ("cross_entropy", _cross_entropy, TIGHT),
    ("softmax_cross_entropy", _fused_xent, TIGHT),
    ("recurrent_cell x5", _recurrent, LOOSE),
    ("dot_attention", _attention, LOOSE),
)


def run_gradchecks(seeds=20, model_seeds=None, coords=12):
    """One CheckResult per layer and per model loss; each layer is checked on ``seeds`` seeds."""
    results = []
    for name, build, tol in LAYERS:
        worst = 0.0
        for s in range(seeds):
            fn, params = build(np.random.default_rng((s, 1)))
            worst = max(worst, nx.finite_difference_check(fn, params, step=STEP).max_rel_error)
        results.append(CheckResult(name, seeds, worst, tol))
    model_seeds = seeds if model_seeds is None else model_seeds
    worst = {"questioner loss": 0.0, "answerer loss": 0.0, "guesser loss": 0.0}
    for s in range(model_seeds):
        q, a, g, corpus = _tiny_models(s)
        rng = np.random.default_rng((s, 2))
        for key, fn, model in (
            ("questioner loss", _questioner_loss(q, corpus), q),
            ("answerer loss", _answerer_loss(a, corpus), a),
            ("guesser loss", _guesser_loss(g, corpus), g),
        ):
            rep = nx.finite_difference_check(fn, model.parameters(), step=STEP, coords=coords, rng=rng)
            worst[key] = max(worst[key], rep.max_rel_error)
    results.extend(CheckResult(k, model_seeds, v, LOOSE) for k, v in worst.items())
    return results
