"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 64] [--hidden 64] [--repeat 200]

Both backends are imported directly, so the comparison does not depend on
GROUNDTALK_KERNELS.
"""
import argparse
import timeit

import numpy as np

from groundtalk.numeric import _pykernels

try:
    from groundtalk.numeric import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def gru_case(batch, hidden, embed, rng):
    x = rng.normal(size=(batch, embed))
    h = rng.normal(size=(batch, hidden))
    W = rng.normal(size=(embed, 3 * hidden)) * 0.1
    U = rng.normal(size=(hidden, 3 * hidden)) * 0.1
    b = np.zeros(3 * hidden)
    mask = (rng.random(batch) < 0.9).astype(np.float64)
    return x, h, W, U, b, mask


def xent_case(batch, vocab, rng):
    logits = rng.normal(size=(batch, vocab))
    targets = rng.integers(0, vocab, size=batch)
    weights = np.full(batch, 1.0 / batch)
    mask = np.ones((batch, vocab), dtype=bool)
    return logits, targets, weights, mask


def bench(mod, args):
    rng = np.random.default_rng(0)
    x, h, W, U, b, mask = gru_case(args.batch, args.hidden, args.embed, rng)
    dh = rng.normal(size=h.shape)
    logits, targets, weights, vmask = xent_case(args.batch, args.vocab, rng)

    def gru():
        out, cache = mod.gru_forward(x, h, W, U, b, mask)
        mod.gru_backward(dh, cache)

    def xent():
        _, probs = mod.softmax_xent_forward(logits, targets, weights, vmask)
        mod.softmax_xent_backward(1.0, probs, targets, weights)

    res = {}
    for name, fn in (("gru fwd+bwd", gru), ("softmax-xent fwd+bwd", xent)):
        t = min(timeit.repeat(fn, number=args.repeat, repeat=5)) / args.repeat
        res[name] = t
    return res


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--vocab", type=int, default=40)
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()

    py = bench(_pykernels, args)
    cy = bench(_ckernels, args) if _ckernels is not None else None
    print(f"batch={args.batch} hidden={args.hidden} embed={args.embed} vocab={args.vocab}")
    print(f"{'kernel':<24}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, t in py.items():
        if cy is None:
            print(f"{name:<24}{t * 1e6:>12.1f}{'n/a':>13}{'':>9}")
        else:
            print(f"{name:<24}{t * 1e6:>12.1f}{cy[name] * 1e6:>13.1f}{t / cy[name]:>8.2f}x")


if __name__ == "__main__":
    main()
