"""Kernel backend selection.

Hot numeric loops have two implementations: numba @njit kernels and a
vectorized pure-numpy fallback. The active backend is chosen once at import
from the CSPLAB_BACKEND environment variable ("numba" or "numpy") and can be
switched at runtime with use_backend(), which the kernel benchmark relies on.
"""

import os

_VALID = ("numba", "numpy")


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _default_backend() -> str:
    env = os.environ.get("CSPLAB_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"CSPLAB_BACKEND must be one of {_VALID}, got {env!r}")
        if env == "numba" and not _numba_available():
            raise RuntimeError("CSPLAB_BACKEND=numba but numba is not importable")
        return env
    return "numba" if _numba_available() else "numpy"


_active = _default_backend()


def active_backend() -> str:
    return _active


def use_backend(name: str) -> str:
    """Switch the kernel backend; returns the previously active one."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    prev = _active
    _active = name
    return prev
