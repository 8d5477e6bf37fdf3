"""Backend selection for the numeric hot loops.

Two interchangeable implementations of the training kernels exist:

* ``nb_ops`` — numba ``@njit`` kernels (default when numba imports cleanly)
* ``np_ops`` — pure-numpy fallback

Selection: the ``SIMFED_BACKEND`` environment variable (``numba`` or
``numpy``) wins; otherwise numba is used when available. ``use_backend`` is a
context manager so the benchmark and the equivalence tests can run both
implementations in one process.

Both backends compute the same quantities in float64; results agree to
rounding (the benchmark and tests check this), but bit-identity is only
guaranteed *within* a backend.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import np_ops

_BACKENDS = {"numpy": np_ops}

try:
    from . import nb_ops

    _BACKENDS["numba"] = nb_ops
    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


def _default_name() -> str:
    env = os.environ.get("SIMFED_BACKEND", "").strip().lower()
    if env:
        if env not in ("numba", "numpy"):
            raise ValueError(f"SIMFED_BACKEND must be 'numba' or 'numpy', got {env!r}")
        if env == "numba" and not _HAVE_NUMBA:
            raise ValueError("SIMFED_BACKEND=numba but numba is not importable")
        return env
    return "numba" if _HAVE_NUMBA else "numpy"


_current = _default_name()


def backend_name() -> str:
    """Name of the backend currently in use ('numba' or 'numpy')."""
    return _current


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def ops():
    """The active kernel module."""
    return _BACKENDS[_current]


@contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend (for benchmarks and tests)."""
    global _current
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    prev = _current
    _current = name
    try:
        yield _BACKENDS[name]
    finally:
        _current = prev
