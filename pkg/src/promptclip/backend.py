"""Kernel backend selection.

The hot inner kernels (row softmax, log-softmax, layer norm, fused AdamW
update) exist twice: compiled with numba and as plain numpy.  The env
var ``PROMPTCLIP_BACKEND`` picks one:

    PROMPTCLIP_BACKEND=numba   force the compiled path (error if numba
                               is not importable)
    PROMPTCLIP_BACKEND=numpy   force the pure-numpy path

Unset, the compiled path is used when numba imports cleanly, numpy
otherwise.  ``benchmarks/bench_backends.py`` compares the two.
"""

import os

_ENV_VAR = "PROMPTCLIP_BACKEND"


def _resolve():
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise RuntimeError(
            f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        from promptclip import kernels_numpy as k
        return "numpy", k
    try:
        from promptclip import kernels_numba as k
        return "numba", k
    except ImportError:
        if choice == "numba":
            raise RuntimeError(
                f"{_ENV_VAR}=numba but numba is not importable"
            )
        from promptclip import kernels_numpy as k
        return "numpy", k


BACKEND, _k = _resolve()

softmax_rows_fwd = _k.softmax_rows_fwd
softmax_rows_bwd = _k.softmax_rows_bwd
log_softmax_rows_fwd = _k.log_softmax_rows_fwd
log_softmax_rows_bwd = _k.log_softmax_rows_bwd
layer_norm_fwd = _k.layer_norm_fwd
layer_norm_bwd = _k.layer_norm_bwd
adamw_update = _k.adamw_update
