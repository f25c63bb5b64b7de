"""Dispatch layer for the dual-backend hot kernels.

Every kernel exists twice: a numba @njit build (csplab.kernels._numba_impl)
and a vectorized numpy fallback (csplab.kernels._numpy_impl). The active
implementation is resolved per call through csplab.backend, so benchmarks and
tests can flip backends in-process.
"""

import importlib

from csplab import backend as _backend

_numpy_impl = importlib.import_module("csplab.kernels._numpy_impl")
_numba_impl = None

KERNEL_NAMES = (
    "ln_fwd", "ln_bwd",
    "softmax_fwd", "softmax_bwd", "softmax_causal_fwd",
    "ce_fwd", "ce_bwd",
    "conv1d_fwd", "conv1d_bwd",
    "adam_update",
    "sample_speech", "token_loglik_sum", "text_scores",
    "decode_steps",
)


def _impl():
    global _numba_impl
    if _backend.active_backend() == "numpy":
        return _numpy_impl
    if _numba_impl is None:
        _numba_impl = importlib.import_module("csplab.kernels._numba_impl")
    return _numba_impl


def _make(name):
    def wrapper(*args):
        return getattr(_impl(), name)(*args)
    wrapper.__name__ = name
    wrapper.__qualname__ = name
    return wrapper


for _name in KERNEL_NAMES:
    globals()[_name] = _make(_name)
del _name, _make
