"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: row-major arrays, shapes of rank 0 to 2,
and exactly the operations the encoders and losses need.  Broadcasting is
limited to scalar-with-tensor; everything else must match shapes exactly.

A module-level :class:`Graph` records every differentiable operation in
creation order, which is already a topological order, so ``backward``
is a single reverse sweep over the tape.  Training code calls
``reset_graph()`` once per step and rebuilds the forward pass.
"""

from __future__ import annotations

import numpy as np

from promptclip import backend
from promptclip.errors import DegenerateInputError, GraphError, NumericError, ShapeError


class Graph:
    """Append-only operation tape.

    Node ids are tape indices; creation order equals topological order.
    ``reset`` empties the tape and bumps the epoch counter, invalidating
    tensors created under the previous epoch.
    """

    def __init__(self):
        self.nodes = []
        self.epoch = 0

    def reset(self):
        self.nodes.clear()
        self.epoch += 1

    def record(self, op, inputs, out, bwd):
        self.nodes.append(_Node(op, inputs, out, bwd))


class _Node:
    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op, inputs, out, bwd):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


_graph = Graph()


def active_graph():
    return _graph


def reset_graph():
    _graph.reset()


class Tensor:
    """Shape-carrying float64 array, optionally tracked on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "epoch", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.epoch = _graph.epoch
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; scalars are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not supported")


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(op, inputs, out_data, bwd):
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        _graph.record(op, inputs, out, bwd)
    return out


def _is_scalar(t):
    return t.data.size == 1


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, bwd)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")
    out = np.ascontiguousarray(x.data.T)

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return _record("transpose", (x,), out, bwd)


def reshape(x, shape):
    out = x.data.reshape(shape)
    old = x.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _record("reshape", (x,), out, bwd)


def add(a, b):
    if a.data.shape == b.data.shape:
        def bwd(g):
            return g, g
    elif _is_scalar(b):
        def bwd(g):
            return g, g.sum().reshape(b.data.shape)
    elif _is_scalar(a):
        def bwd(g):
            return g.sum().reshape(a.data.shape), g
    else:
        raise ShapeError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")
    return _record("add", (a, b), a.data + b.data, bwd)


def mul(a, b):
    if a.data.shape == b.data.shape:
        def bwd(g):
            return g * b.data, g * a.data
    elif _is_scalar(b):
        def bwd(g):
            return g * b.data, (g * a.data).sum().reshape(b.data.shape)
    elif _is_scalar(a):
        def bwd(g):
            return (g * b.data).sum().reshape(a.data.shape), g * a.data
    else:
        raise ShapeError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}")
    return _record("mul", (a, b), a.data * b.data, bwd)


def scale(x, c):
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _record("scale", (x,), x.data * c, bwd)


def tanh(x):
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (x,), out, bwd)


def exp(x):
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _record("exp", (x,), out, bwd)


def log(x):
    if np.any(x.data <= 0.0):
        raise NumericError("log of non-positive value")
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _record("log", (x,), out, bwd)


def clamp(x, lo, hi):
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        return (g * mask,)

    return _record("clamp", (x,), out, bwd)


def _as_rows(x):
    if x.data.ndim == 1:
        return x.data.reshape(1, -1), True
    if x.data.ndim == 2:
        return x.data, False
    raise ShapeError(f"expected vector or matrix, got shape {x.data.shape}")


def softmax_rows(x):
    rows, was_1d = _as_rows(x)
    if not np.all(np.isfinite(rows)):
        raise NumericError("softmax_rows: non-finite input")
    y = backend.softmax_rows_fwd(rows)

    def bwd(g):
        gx = backend.softmax_rows_bwd(y, g.reshape(y.shape))
        return (gx.reshape(x.data.shape),)

    return _record("softmax_rows", (x,), y.reshape(x.data.shape), bwd)


def log_softmax_rows(x):
    rows, was_1d = _as_rows(x)
    if not np.all(np.isfinite(rows)):
        raise NumericError("log_softmax_rows: non-finite input")
    y = backend.log_softmax_rows_fwd(rows)

    def bwd(g):
        gx = backend.log_softmax_rows_bwd(y, g.reshape(y.shape))
        return (gx.reshape(x.data.shape),)

    return _record("log_softmax_rows", (x,), y.reshape(x.data.shape), bwd)


def layer_norm(x, eps=1e-5):
    rows, was_1d = _as_rows(x)
    y, inv = backend.layer_norm_fwd(rows, eps)

    def bwd(g):
        gx = backend.layer_norm_bwd(y, inv, g.reshape(y.shape))
        return (gx.reshape(x.data.shape),)

    return _record("layer_norm", (x,), y.reshape(x.data.shape), bwd)


def concat_cols(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(
            f"concat_cols leading-dimension mismatch: {a.data.shape} vs {b.data.shape}"
        )
    n1 = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        return np.ascontiguousarray(g[:, :n1]), np.ascontiguousarray(g[:, n1:])

    return _record("concat_cols", (a, b), out, bwd)


def l2_normalize(v):
    if v.data.ndim != 1:
        raise ShapeError(f"l2_normalize expects a vector, got shape {v.data.shape}")
    norm = float(np.linalg.norm(v.data))
    if norm == 0.0:
        raise DegenerateInputError("l2_normalize: zero vector")
    out = v.data / norm

    def bwd(g):
        return ((g - out * np.dot(out, g)) / norm,)

    return _record("l2_normalize", (v,), out, bwd)


def sum_all(x):
    shape = x.data.shape

    def bwd(g):
        return (np.full(shape, float(g)),)

    return _record("sum_all", (x,), np.array(x.data.sum()), bwd)


def mean_rows(x):
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got shape {x.data.shape}")
    n = x.data.shape[0]
    out = x.data.mean(axis=0)

    def bwd(g):
        return (np.tile(g / n, (n, 1)),)

    return _record("mean_rows", (x,), out, bwd)


def take_rows(table, ids):
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows expects a matrix table, got {table.data.shape}")
    if ids.ndim != 1:
        raise ShapeError("take_rows expects a flat index sequence")
    out = table.data[ids]
    tshape = table.data.shape

    def bwd(g):
        gt = np.zeros(tshape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record("take_rows", (table,), out, bwd)


def stack_rows(vectors):
    vecs = list(vectors)
    if not vecs:
        raise ShapeError("stack_rows of empty sequence")
    d = vecs[0].data.shape
    for v in vecs:
        if v.data.ndim != 1 or v.data.shape != d:
            raise ShapeError("stack_rows expects equal-length vectors")
    out = np.stack([v.data for v in vecs])

    def bwd(g):
        return tuple(g[i] for i in range(len(vecs)))

    return _record("stack_rows", tuple(vecs), out, bwd)


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss):
    """Populate ``grad`` on every tensor reachable from ``loss``.

    Requires a scalar loss created under the current tape epoch.  Tensors
    that participate in the tape but do not influence the loss end up with
    zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.epoch != _graph.epoch:
        raise GraphError("backward on a tensor from a previous tape epoch")

    for node in _graph.nodes:
        for t in node.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
        if node.out.grad is None:
            node.out.grad = np.zeros_like(node.out.data)

    loss.grad = np.ones_like(loss.data)

    for node in reversed(_graph.nodes):
        g = node.out.grad
        if g is None or not np.any(g):
            continue
        grads = node.bwd(g)
        for t, gt in zip(node.inputs, grads):
            if t.requires_grad and gt is not None:
                t.grad += gt
