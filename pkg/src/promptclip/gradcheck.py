"""Central finite-difference gradient verification.

Used by the test suite and the ``grad-check`` CLI command.  The checker
treats the forward pass as a black box: it re-runs the whole computation
with each parameter element nudged by +/- eps, so it stays independent
of the tape implementation it verifies.
"""

import numpy as np

from promptclip import tensor as T

EPS = 1e-6
REL_TOL = 1e-5


def relative_error(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|, 1), reduced to the maximum.

    The unit floor in the denominator keeps finite-difference roundoff
    (about 1e-10 for loss values of order one) from drowning genuinely
    tiny gradient entries.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(fn, arr, eps=EPS):
    """Central finite differences of scalar ``fn`` w.r.t. every element of ``arr``.

    ``fn`` takes no arguments and reads ``arr`` by reference; the array is
    restored after each probe.
    """
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def check_op(build, params, eps=EPS):
    """Compare tape gradients of ``build(params) -> scalar Tensor`` to FD.

    ``params`` maps names to numpy arrays; each is wrapped in a
    requires_grad Tensor and passed to ``build`` as a dict of Tensors.
    Returns {name: max relative error}.
    """

    def forward():
        T.reset_graph()
        tensors = {k: T.Tensor(v, requires_grad=True) for k, v in params.items()}
        loss = build(tensors)
        return loss, tensors

    loss, tensors = forward()
    T.backward(loss)
    analytic = {k: t.grad.copy() for k, t in tensors.items()}

    def value():
        return forward()[0].item()

    report = {}
    for name, arr in params.items():
        numeric = numeric_grad(value, arr, eps)
        report[name] = relative_error(analytic[name], numeric)
    T.reset_graph()
    return report


def check_model(params, loss_fn, eps=EPS, max_elements=None, rng=None):
    """Finite-difference check of a full model.

    ``params`` maps names to Tensors with requires_grad set; ``loss_fn``
    rebuilds the forward pass from the current parameter data and returns
    the scalar loss Tensor.  When ``max_elements`` is given, at most that
    many elements per parameter are probed (chosen by ``rng``), keeping
    large embedding tables affordable.

    Returns {name: max relative error over probed elements}.
    """
    T.reset_graph()
    loss = loss_fn()
    T.backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}

    def value():
        T.reset_graph()
        return loss_fn().item()

    report = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_elements, replace=False)
            idx.sort()
        worst = 0.0
        aflat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = relative_error(aflat[i], num)
            if err > worst:
                worst = err
        report[name] = worst
    T.reset_graph()
    return report
