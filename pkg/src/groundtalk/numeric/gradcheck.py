"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape


@dataclass
class GradReport:
    max_rel_error: float
    worst: tuple | None  # (parameter index, flat coordinate)
    analytic: float
    numeric: float
    n_checked: int
    per_param: list = field(default_factory=list)

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


def relative_error(a, n, floor=1e-3):
    return abs(a - n) / max(abs(a), abs(n), floor)


def finite_difference_check(function, parameters, step=1e-5, tolerance=1e-6, coords=None, rng=None, floor=1e-3):
    """Compare tape gradients of a scalar ``function()`` with central differences.

    ``parameters`` are Tensors with ``requires_grad``; ``function`` must rebuild
    the graph from their current ``data`` on every call. ``coords`` limits the
    number of coordinates checked per parameter (sampled with ``rng``).
    ``tolerance`` is informational; compare with ``report.passed``.
    """
    parameters = list(parameters)
    for p in parameters:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = function()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in parameters]

    rng = rng or np.random.default_rng(0)
    worst = (0.0, None, 0.0, 0.0)
    per_param = []
    checked = 0
    for pi, p in enumerate(parameters):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            idx = np.sort(rng.choice(flat.size, size=coords, replace=False))
        pmax = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = function().item()
            flat[i] = orig - step
            fm = function().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            ana = analytic[pi].reshape(-1)[i]
            err = relative_error(ana, num, floor)
            checked += 1
            pmax = max(pmax, err)
            if err > worst[0] or worst[1] is None:
                worst = (err, (pi, int(i)), float(ana), float(num))
        per_param.append(pmax)
    return GradReport(worst[0], worst[1], worst[2], worst[3], checked, per_param)
