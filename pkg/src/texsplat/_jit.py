"""Numba switch.

Set ``TEXSPLAT_DISABLE_NUMBA=1`` to run every hot kernel through its
pure-numpy path instead.  The flag is read once at import time; callers that
need both paths in one process (tests, benchmarks) pass ``backend=`` explicitly.
"""

import os

_flag = os.environ.get("TEXSPLAT_DISABLE_NUMBA", "").strip().lower()
JIT_REQUESTED = _flag not in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper


JIT_ENABLED = JIT_REQUESTED and HAS_NUMBA
DEFAULT_BACKEND = "numba" if JIT_ENABLED else "numpy"


def resolve_backend(backend=None):
    if backend is None:
        return DEFAULT_BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend
