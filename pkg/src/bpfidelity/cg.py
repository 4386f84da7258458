"""Conjugate gradients for symmetric positive definite systems."""
from typing import Callable, NamedTuple

import numpy as np

from .errors import NumericalError


class CGResult(NamedTuple):
    x: np.ndarray
    residuals: list  # relative residual norm after each iteration (index 0: initial)
    converged: bool


def conjugate_gradient(
    spd_apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    iters: int = 500,
    tol: float = 1e-10,
) -> CGResult:
    """Solve ``M x = b`` for SPD ``M`` given only ``x -> M x``.

    Stops once ``||b - M x|| <= tol * ||b||`` or after ``iters``
    iterations.  Non-finite values raise :class:`NumericalError`.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), [0.0], True)
    r = b - spd_apply(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = float(r @ r)
    history = [np.sqrt(rs) / bnorm]
    if history[0] <= tol:
        return CGResult(x, history, True)
    for _ in range(iters):
        Mp = spd_apply(p)
        pMp = float(p @ Mp)
        if not np.isfinite(pMp):
            raise NumericalError("non-finite curvature in conjugate gradients")
        if pMp <= 0.0:
            # exact breakdown: the Krylov space is exhausted
            return CGResult(x, history, history[-1] <= tol)
        alpha = rs / pMp
        x += alpha * p
        r -= alpha * Mp
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise NumericalError("non-finite residual in conjugate gradients")
        history.append(np.sqrt(rs_new) / bnorm)
        if history[-1] <= tol:
            return CGResult(x, history, True)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(x, history, False)
