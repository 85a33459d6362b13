"""Pure-numpy reference kernels.

Gate layout for the recurrent cell: columns [0:H) update gate, [H:2H) reset
gate, [2H:3H) candidate. Every kernel here has a twin in ``_ckernels.pyx``
with the same signature; ``kernels.py`` picks one at import time.
"""
import numpy as np

BACKEND = "python"


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gru_forward(x, h, W, U, b, mask):
    """One masked recurrent step for a batch.

    x: (B, I), h: (B, H), W: (I, 3H), U: (H, 3H), b: (3H,), mask: (B,) of 0/1.
    Rows with mask 0 pass h through unchanged.
    Returns (h_out, cache).
    """
    H = h.shape[1]
    gx = x @ W
    gx += b
    gh = h @ U[:, : 2 * H]
    z = _sigmoid(gx[:, :H] + gh[:, :H])
    r = _sigmoid(gx[:, H : 2 * H] + gh[:, H:])
    rh = r * h
    n = np.tanh(gx[:, 2 * H :] + rh @ U[:, 2 * H :])
    zm = z * mask[:, None]
    h_out = h + zm * (n - h)
    return h_out, (x, h, W, U, z, r, rh, n, mask)


def gru_backward(dh_out, cache):
    """Gradients of one step. Returns (dx, dh, dW, dU, db)."""
    x, h, W, U, z, r, rh, n, mask = cache
    H = h.shape[1]
    m = mask[:, None]
    zm = z * m
    dn = dh_out * zm
    dz = dh_out * m * (n - h)
    dh = dh_out * (1.0 - zm)
    dan = dn * (1.0 - n * n)
    drh = dan @ U[:, 2 * H :].T
    dr = drh * h
    dh += drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dzr = np.concatenate([daz, dar], axis=1)
    dh += dzr @ U[:, : 2 * H].T
    dU = np.empty_like(U)
    dU[:, : 2 * H] = h.T @ dzr
    dU[:, 2 * H :] = rh.T @ dan
    dg = np.concatenate([dzr, dan], axis=1)
    dW = x.T @ dg
    db = dg.sum(axis=0)
    dx = dg @ W.T
    return dx, dh, dW, dU, db


def softmax_xent_forward(logits, targets, weights, mask):
    """Weighted sum of -log softmax(logits)[i, targets[i]].

    logits (B, V); targets (B,) int; weights (B,); mask (B, V) bool or None,
    False entries are excluded from the normaliser.
    Returns (loss, probs).
    """
    z = logits if mask is None else np.where(mask, logits, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(logits.shape[0])
    logp = (z - zmax - np.log(s))[rows, targets]
    loss = -float(np.dot(weights, logp))
    return loss, probs


def softmax_xent_backward(gout, probs, targets, weights):
    g = probs.copy()
    g[np.arange(probs.shape[0]), targets] -= 1.0
    g *= (weights * gout)[:, None]
    return g
