"""Numba-compiled kernels, hot-loop twins of :mod:`promptclip.kernels_numpy`.

Loops are written row-at-a-time with sequential accumulation so results
agree with the numpy path to rounding error.  fastmath stays off: the
training loop's determinism contract forbids reassociation.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def softmax_rows_fwd(x):
    r, c = x.shape
    out = np.empty((r, c))
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(c):
            out[i, j] /= s
    return out


@njit(cache=True)
def softmax_rows_bwd(y, gy):
    r, c = y.shape
    gx = np.empty((r, c))
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += gy[i, j] * y[i, j]
        for j in range(c):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx


@njit(cache=True)
def log_softmax_rows_fwd(x):
    r, c = x.shape
    out = np.empty((r, c))
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            s += np.exp(x[i, j] - m)
        lse = np.log(s)
        for j in range(c):
            out[i, j] = x[i, j] - m - lse
    return out


@njit(cache=True)
def log_softmax_rows_bwd(y, gy):
    r, c = y.shape
    gx = np.empty((r, c))
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += gy[i, j]
        for j in range(c):
            gx[i, j] = gy[i, j] - np.exp(y[i, j]) * s
    return gx


@njit(cache=True)
def layer_norm_fwd(x, eps):
    r, c = x.shape
    out = np.empty((r, c))
    inv = np.empty(r)
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        iv = 1.0 / np.sqrt(var + eps)
        inv[i] = iv
        for j in range(c):
            out[i, j] = (x[i, j] - mu) * iv
    return out, inv


@njit(cache=True)
def layer_norm_bwd(y, inv, gy):
    r, c = y.shape
    gx = np.empty((r, c))
    for i in range(r):
        gmean = 0.0
        ymean = 0.0
        for j in range(c):
            gmean += gy[i, j]
            ymean += gy[i, j] * y[i, j]
        gmean /= c
        ymean /= c
        for j in range(c):
            gx[i, j] = inv[i] * (gy[i, j] - gmean - y[i, j] * ymean)
    return gx


@njit(cache=True)
def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    n = p.size
    pf = p.ravel()
    gf = g.ravel()
    mf = m.ravel()
    vf = v.ravel()
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(n):
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * gf[i]
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * gf[i] * gf[i]
        pf[i] -= lr * (mf[i] / bc1) / (np.sqrt(vf[i] / bc2) + eps)
        if weight_decay != 0.0:
            pf[i] -= lr * weight_decay * pf[i]
