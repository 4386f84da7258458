"""Per-pixel kernels with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise,
or when the environment variable ``BPFIDELITY_PURE_PYTHON=1`` is set at
import time, the numpy versions from ``_kernels_py`` are used.  ``BACKEND``
names the active one.
"""
import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("BPFIDELITY_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
    except ImportError:  # extension not built
        _impl = _kernels_py
    else:
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def grad2d(x):
    return _impl.grad2d(_c(x))


def grad2d_adjoint(px, py):
    return _impl.grad2d_adjoint(_c(px), _c(py))


def tv_norm(x):
    return float(_impl.tv_norm(_c(x)))


def sb_shrink_update(x, dx, dy, bx, by, thr):
    # dx, dy, bx, by are updated in place and must already be contiguous float64
    return _impl.sb_shrink_update(_c(x), dx, dy, bx, by, float(thr))


def haar_forward(img, levels=None):
    return _impl.haar_forward(_c(img), levels)


def haar_inverse(coef, levels=None):
    return _impl.haar_inverse(_c(coef), levels)


def backend_module(name):
    """Return the kernel module for ``name`` ("python" or "cython").

    Used by the benchmark and by tests that compare the two backends.
    """
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
