"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Only the layers the agents need are provided. Operations are recorded on the
innermost active :class:`Tape`; outside a tape nothing is recorded and the
forward pass runs without bookkeeping (rollouts and evaluation use that).
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import kernels

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return list(self.data.shape)

    @property
    def values(self):
        return self.data.ravel().tolist()

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class ParameterBlock(Tensor):
    """A named trainable tensor with its gradient and Adam moments."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    @property
    def tensor(self):
        return self

    @property
    def gradient(self):
        return self.grad

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"ParameterBlock({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; ops executed inside are recorded when at least
    one input requires a gradient. ``backward`` may be called repeatedly and
    is deterministic.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward):
        self.nodes.append(_Node(out, inputs, backward))
        self._produced.add(id(out))

    def backward(self, loss, seed=None):
        """Propagate d(loss) back to every leaf that requires a gradient.

        Leaf gradients are *accumulated* into ``leaf.grad``. Returns the
        number of nodes visited.
        """
        grads = {id(loss): np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)}
        visited = 0
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            visited += 1
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if id(t) in self._produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
        return visited


def _active():
    return _TAPES[-1] if _TAPES else None


def _result(data, inputs, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.data.shape, b.data.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.data.shape, b.data.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def tanh(x):
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def log(x):
    d = x.data
    return _result(np.log(d), (x,), lambda g: (g / d,))


# ---------------------------------------------------------------- reductions / shape


def sum(x, axis=None):
    shape = x.data.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), back)


def mean(x):
    n = x.data.size
    shape = x.data.shape
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),))


def reshape(x, shape):
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else tensors[0].data.ndim + axis
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim:
            raise DimensionError(f"concat: rank mismatch {[t.shape for t in tensors]}")
    sizes = [t.data.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    try:
        data = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    return _result(data, tuple(tensors), back)


def take_rows(x, index):
    """x[index] along the first axis (gather)."""
    idx = np.asarray(index, dtype=np.int64)
    shape = x.data.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), back)


def embedding_lookup(table, indices):
    """Rows of an embedding table; indices may have any shape."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"embedding index out of range for table of {table.data.shape[0]} rows")
    shape = table.data.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx.ravel(), g.reshape(-1, shape[1]))
        return (out,)

    return _result(table.data[idx], (table,), back)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """(..., k) @ (k, n) -> (..., n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    k, n = bd.shape

    def back(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _result(ad @ bd, (a, b), back)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def rowdot(objects, query):
    """Per-row dot products: objects (..., n, d), query (..., d) -> (..., n)."""
    od, qd = objects.data, query.data
    if od.shape[-1] != qd.shape[-1] or od.shape[:-2] != qd.shape[:-1]:
        raise DimensionError(f"rowdot: shapes {objects.shape} and {query.shape} disagree")
    out = np.einsum("...nd,...d->...n", od, qd)

    def back(g):
        return g[..., :, None] * qd[..., None, :], np.einsum("...n,...nd->...d", g, od)

    return _result(out, (objects, query), back)


# ---------------------------------------------------------------- probabilities


def _masked(z, mask):
    return z if mask is None else np.where(mask, z, -np.inf)


def softmax(logits, mask=None):
    """Softmax over the last axis; ``mask`` False entries get probability 0."""
    logits = as_tensor(logits)
    if logits.data.ndim == 0 or logits.data.shape[-1] == 0:
        raise DimensionError("softmax of an empty tensor")
    z = _masked(logits.data, mask)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (logits,), back)


def log_softmax(logits, mask=None):
    logits = as_tensor(logits)
    if logits.data.ndim == 0 or logits.data.shape[-1] == 0:
        raise DimensionError("log_softmax of an empty tensor")
    z = _masked(logits.data, mask)
    zs = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    out = zs - lse
    p = np.exp(out)

    def back(g):
        gg = np.where(np.isfinite(out), g, 0.0)
        return (gg - p * gg.sum(axis=-1, keepdims=True),)

    return _result(out, (logits,), back)


def cross_entropy(probabilities, true_index):
    """-log p[true_index] for a probability vector (normally a softmax output)."""
    p = probabilities.data
    if p.ndim != 1:
        raise DimensionError(f"cross_entropy expects a vector, got shape {probabilities.shape}")
    if not 0 <= true_index < p.shape[0]:
        raise IndexError(f"true_index {true_index} out of range for {p.shape[0]} classes")

    def back(g):
        out = np.zeros_like(p)
        out[true_index] = -g / p[true_index]
        return (out,)

    return _result(np.asarray(-np.log(p[true_index])), (probabilities,), back)


def softmax_cross_entropy(logits, targets, weights=None, mask=None):
    """Fused sum_i w_i * -log softmax(logits_i)[targets_i] over a (B, V) batch.

    Gradient with respect to the logits is w_i * (softmax - onehot).
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects (B, V) logits, got {logits.shape}")
    t = np.ascontiguousarray(targets, dtype=np.int64)
    if t.shape != (z.shape[0],):
        raise DimensionError(f"targets shape {t.shape} does not match batch {z.shape[0]}")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise IndexError("target index out of range")
    w = np.ones(z.shape[0]) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    zc = np.ascontiguousarray(z)
    loss, probs = kernels.softmax_xent_forward(zc, t, w, mask)

    def back(g):
        return (kernels.softmax_xent_backward(float(g), probs, t, w),)

    return _result(np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------- fused layers


def recurrent_cell(h, x, W, U, b, mask=None):
    """Gated recurrent step (update + reset gates).

    h (B, H) or (H,), x (B, I) or (I,). Rows whose mask is 0 keep their state.
    With zero biases, a zero state and zero input map to a zero state.
    """
    vec = h.data.ndim == 1
    hd = np.ascontiguousarray(np.atleast_2d(h.data))
    xd = np.ascontiguousarray(np.atleast_2d(x.data))
    Hn = W.data.shape[1] // 3
    if (
        hd.shape[1] != Hn
        or xd.shape[1] != W.data.shape[0]
        or U.data.shape != (Hn, 3 * Hn)
        or b.data.shape != (3 * Hn,)
        or hd.shape[0] != xd.shape[0]
    ):
        raise DimensionError(
            f"recurrent_cell: state {h.shape}, input {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}"
        )
    m = np.ones(hd.shape[0]) if mask is None else np.ascontiguousarray(mask, dtype=np.float64)
    out, cache = kernels.gru_forward(xd, hd, W.data, U.data, b.data, m)

    def back(g):
        g2 = np.ascontiguousarray(np.atleast_2d(g))
        dx, dh, dW, dU, db = kernels.gru_backward(g2, cache)
        if vec:
            dx, dh = dx[0], dh[0]
        return dh, dx, dW, dU, db

    return _result(out[0] if vec else out, (h, x, W, U, b), back)


def dot_attention(query, keys, values, mask=None):
    """Global dot-product attention.

    query (..., d), keys (..., n, d), values (..., n, d) -> (..., d).
    ``mask`` (..., n) marks valid rows. Returns (output, weights array).
    """
    q, k, v = query.data, keys.data, values.data
    if k.shape[-1] != q.shape[-1] or v.shape != k.shape or k.shape[:-2] != q.shape[:-1]:
        raise DimensionError(f"dot_attention: query {query.shape}, keys {keys.shape}, values {values.shape}")
    if k.shape[-2] < 1:
        raise DimensionError("dot_attention needs at least one key")
    s = _masked(np.einsum("...nd,...d->...n", k, q), mask)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    w = e / e.sum(axis=-1, keepdims=True)
    out = np.einsum("...n,...nd->...d", w, v)

    def back(g):
        dv = w[..., :, None] * g[..., None, :]
        dw = np.einsum("...nd,...d->...n", v, g)
        ds = w * (dw - (w * dw).sum(axis=-1, keepdims=True))
        dq = np.einsum("...n,...nd->...d", ds, k)
        dk = ds[..., :, None] * q[..., None, :]
        return dq, dk, dv

    return _result(out, (query, keys, values), back), w
