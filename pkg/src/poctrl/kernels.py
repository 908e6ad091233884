"""Backend selection for the hot kernels.

The compiled extension is used when importable, otherwise the numpy
fallback.  ``set_backend`` switches explicitly (tests and benchmarks
compare both).
"""
from __future__ import annotations

import importlib

from ._ext import _kernels_py

try:
    from ._ext import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _compiled if _compiled is not None else _kernels_py


def available_backends() -> list[str]:
    return (["cython"] if _compiled is not None else []) + ["python"]


def backend_name() -> str:
    return "cython" if _active is _compiled and _compiled is not None else "python"


def set_backend(name: str) -> None:
    global _active
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        _active = _compiled
    elif name == "python":
        _active = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")


def get(name: str | None = None):
    """Kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "cython" and _compiled is not None:
        return _compiled
    raise ImportError(f"backend {name!r} unavailable")


rank_table = _kernels_py.rank_table
rank_counts = _kernels_py.rank_counts
