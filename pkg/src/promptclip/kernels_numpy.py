"""Pure-numpy reference kernels.

Every function here has a numba twin in :mod:`promptclip.kernels_numba`
with identical signatures and semantics.  The backend module picks one
set at import time.  All kernels operate on float64 C-contiguous arrays.
"""

import numpy as np


def softmax_rows_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y, gy):
    # gx = y * (gy - sum_j gy_j y_j) per row
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def log_softmax_rows_fwd(x):
    m = x.max(axis=1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    return z - lse


def log_softmax_rows_bwd(y, gy):
    # gx = gy - softmax * sum_j gy_j per row, with softmax = exp(y)
    s = gy.sum(axis=1, keepdims=True)
    return gy - np.exp(y) * s


def layer_norm_fwd(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mu) * inv, inv.ravel()


def layer_norm_bwd(y, inv, gy):
    # gx = inv * (gy - mean(gy) - y * mean(gy * y)) per row
    n = y.shape[1]
    gmean = gy.mean(axis=1, keepdims=True)
    ymean = (gy * y).mean(axis=1, keepdims=True)
    return inv[:, None] * (gy - gmean - y * ymean)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    if weight_decay != 0.0:
        p -= lr * weight_decay * p
