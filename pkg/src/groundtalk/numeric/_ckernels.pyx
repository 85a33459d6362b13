# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.

Matrix products still go through numpy (BLAS); the gate arithmetic, which is
a dozen small temporaries in numpy, is fused into single passes here.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log

cnp.import_array()

BACKEND = "cython"


cdef inline double _sig(double v) nogil:
    cdef double e
    if v >= 0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def gru_forward(x, h, W, U, b, mask):
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, j
    gx_arr = x @ W
    gh_arr = h @ U[:, : 2 * H]
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gh = gh_arr
    cdef const double[::1] bv = b
    cdef const double[:, ::1] hv = np.ascontiguousarray(h)
    cdef const double[::1] mv = mask
    z_arr = np.empty((B, H))
    r_arr = np.empty((B, H))
    rh_arr = np.empty((B, H))
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] rh = rh_arr
    with nogil:
        for i in range(B):
            for j in range(H):
                z[i, j] = _sig(gx[i, j] + bv[j] + gh[i, j])
                r[i, j] = _sig(gx[i, H + j] + bv[H + j] + gh[i, H + j])
                rh[i, j] = r[i, j] * hv[i, j]
    cand_arr = rh_arr @ U[:, 2 * H :]
    cdef double[:, ::1] cand = cand_arr
    n_arr = np.empty((B, H))
    out_arr = np.empty((B, H))
    cdef double[:, ::1] n = n_arr
    cdef double[:, ::1] out = out_arr
    cdef double hij
    with nogil:
        for i in range(B):
            for j in range(H):
                n[i, j] = tanh(gx[i, 2 * H + j] + bv[2 * H + j] + cand[i, j])
                hij = hv[i, j]
                out[i, j] = hij + z[i, j] * mv[i] * (n[i, j] - hij)
    return out_arr, (x, h, W, U, z_arr, r_arr, rh_arr, n_arr, mask)


def gru_backward(dh_out, cache):
    x, h, W, U, z_arr, r_arr, rh_arr, n_arr, mask = cache
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1], i, j
    cdef const double[:, ::1] dout = np.ascontiguousarray(dh_out)
    cdef const double[:, ::1] hv = np.ascontiguousarray(h)
    cdef const double[:, ::1] z = z_arr
    cdef const double[:, ::1] r = r_arr
    cdef const double[:, ::1] n = n_arr
    cdef const double[::1] mv = mask
    dg_arr = np.empty((B, 3 * H))
    dh_arr = np.empty((B, H))
    cdef double[:, ::1] dg = dg_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double zm, d
    with nogil:
        for i in range(B):
            for j in range(H):
                d = dout[i, j]
                zm = z[i, j] * mv[i]
                dg[i, 2 * H + j] = d * zm * (1.0 - n[i, j] * n[i, j])
                dg[i, j] = d * mv[i] * (n[i, j] - hv[i, j]) * z[i, j] * (1.0 - z[i, j])
                dh[i, j] = d * (1.0 - zm)
    dan = dg_arr[:, 2 * H :]
    drh_arr = dan @ U[:, 2 * H :].T
    cdef const double[:, ::1] drh = drh_arr
    with nogil:
        for i in range(B):
            for j in range(H):
                dg[i, H + j] = drh[i, j] * hv[i, j] * r[i, j] * (1.0 - r[i, j])
                dh[i, j] += drh[i, j] * r[i, j]
    dzr = dg_arr[:, : 2 * H]
    dh_arr += dzr @ U[:, : 2 * H].T
    dU = np.empty_like(U)
    dU[:, : 2 * H] = h.T @ dzr
    dU[:, 2 * H :] = rh_arr.T @ dan
    dW = x.T @ dg_arr
    db = dg_arr.sum(axis=0)
    dx = dg_arr @ W.T
    return dx, dh_arr, dW, dU, db


def softmax_xent_forward(logits, targets, weights, mask):
    cdef Py_ssize_t B = logits.shape[0], V = logits.shape[1], i, j
    cdef const double[:, ::1] z = np.ascontiguousarray(logits)
    cdef const long[::1] t = np.ascontiguousarray(targets, dtype=np.int64)
    cdef const double[::1] w = np.ascontiguousarray(weights)
    cdef const unsigned char[:, ::1] mk
    cdef bint has_mask = mask is not None
    if has_mask:
        mk = np.ascontiguousarray(mask, dtype=np.uint8)
    probs_arr = np.empty((B, V))
    cdef double[:, ::1] p = probs_arr
    cdef double zmax, s, loss = 0.0
    for i in range(B):
        zmax = -1e308
        for j in range(V):
            if (not has_mask or mk[i, j]) and z[i, j] > zmax:
                zmax = z[i, j]
        s = 0.0
        for j in range(V):
            if has_mask and not mk[i, j]:
                p[i, j] = 0.0
            else:
                p[i, j] = exp(z[i, j] - zmax)
                s += p[i, j]
        for j in range(V):
            p[i, j] /= s
        loss -= w[i] * (z[i, t[i]] - zmax - log(s))
    return loss, probs_arr


def softmax_xent_backward(gout, probs, targets, weights):
    cdef Py_ssize_t B = probs.shape[0], V = probs.shape[1], i, j
    cdef const double[:, ::1] p = probs
    cdef const long[::1] t = np.ascontiguousarray(targets, dtype=np.int64)
    cdef const double[::1] w = np.ascontiguousarray(weights)
    cdef double go = gout, c
    g_arr = np.empty((B, V))
    cdef double[:, ::1] g = g_arr
    with nogil:
        for i in range(B):
            c = w[i] * go
            for j in range(V):
                g[i, j] = p[i, j] * c
            g[i, t[i]] -= c
    return g_arr
