"""Kernel backend selection.

The compiled ``_kernels_c`` extension is used when it imports; otherwise the
numpy versions in ``_kernels_py`` are used. Set ``PRIVKT_PURE_PYTHON=1`` to
force the fallback (handy for benchmarking and for cross-checking results).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

ACT_IDENTITY = _kernels_py.ACT_IDENTITY
ACT_RELU = _kernels_py.ACT_RELU
ACT_SIGMOID = _kernels_py.ACT_SIGMOID
ACTIVATIONS = {"identity": ACT_IDENTITY, "relu": ACT_RELU, "sigmoid": ACT_SIGMOID}

_compiled = None
if os.environ.get("PRIVKT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_c as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def compiled_available() -> bool:
    return _compiled is not None


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled' or 'python')."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dense_forward(x, w, b, act: int):
    return _impl.dense_forward(_c(x), _c(w), _c(b), act)


def dense_backward(x, w, out, gout, act: int):
    return _impl.dense_backward(_c(x), _c(w), _c(out), _c(gout), act)


def softmax_rows(z):
    return _impl.softmax_rows(_c(z))


def clip_rows(v, c: float):
    return _impl.clip_rows(_c(v), float(c))


def log_a_int(q: float, sigma: float, alpha: int) -> float:
    return float(_impl.log_a_int(float(q), float(sigma), int(alpha)))
