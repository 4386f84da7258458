"""Least-squares and back-projection fidelity terms."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import DimensionError
from .linops import LinearOperator, gram_solve, pseudo_inverse_apply, sq_spectral_norm

LS = "ls"
BP = "bp"


class FidelityTerm:
    """Data term ``l(x)`` for observations ``y = A x + e``.

    ``variant="ls"``:  ``1/2 ||y - A x||^2``, gradient ``-A^T (y - A x)``.

    ``variant="bp"``:  ``1/2 (y - A x)^T (A A^T + eps I)^{-1} (y - A x)``,
    gradient ``-A_eps^+ (y - A x)`` with ``A_eps^+ = A^T (A A^T + eps I)^{-1}``.
    For ``eps = 0`` this is exactly ``1/2 ||A^+ y - A^+ A x||^2``.  With
    loading the same ``A_eps^+`` enters value and gradient, so the gradient
    is the exact gradient of the value and the Hessian is the loaded
    projector (spectral norm below 1).
    """

    def __init__(self, variant: str, op: LinearOperator, y, eps: float = 0.0):
        variant = variant.lower()
        if variant not in (LS, BP):
            raise ValueError(f"unknown fidelity variant {variant!r}")
        if eps < 0:
            raise ValueError("eps must be non-negative")
        if variant == LS and eps != 0:
            raise ValueError("eps only applies to the back-projection fidelity")
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (op.m,):
            raise DimensionError(f"observations must have length {op.m}, got {y.shape}")
        self.variant = variant
        self.op = op
        self.y = y
        self.eps = float(eps)

    def __repr__(self):
        return f"FidelityTerm({self.variant!r}, {self.op!r}, eps={self.eps:g})"

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.op.n,):
            raise DimensionError(f"signal must have length {self.op.n}, got {x.shape}")
        return x

    @cached_property
    def backprojection(self) -> np.ndarray:
        """``A_eps^+ y`` (computed once)."""
        return pseudo_inverse_apply(self.op, self.y, self.eps)

    def residual(self, x) -> np.ndarray:
        return self.y - self.op.apply(self._check(x))

    def value(self, x) -> float:
        r = self.residual(x)
        if self.variant == LS:
            return 0.5 * float(r @ r)
        return 0.5 * float(r @ gram_solve(self.op, r, self.eps))

    def gradient(self, x) -> np.ndarray:
        r = self.residual(x)
        if self.variant == LS:
            return -self.op.adjoint(r)
        return -pseudo_inverse_apply(self.op, r, self.eps)

    def hessian_apply(self, x) -> np.ndarray:
        """The constant Hessian applied to ``x`` (``A^T A`` or ``A_eps^+ A``)."""
        x = self._check(x)
        if self.variant == LS:
            return self.op.adjoint(self.op.apply(x))
        return pseudo_inverse_apply(self.op, self.op.apply(x), self.eps)

    @cached_property
    def lipschitz(self) -> float:
        """Lipschitz constant of the gradient.

        Exactly 1 for back-projection (the Hessian is a projection, or a
        loaded one with smaller norm); the power-method ``lambda_1^2`` for
        least squares.
        """
        if self.variant == BP:
            return 1.0
        return sq_spectral_norm(self.op, iters=500, tol=1e-9).value


def value(f: FidelityTerm, x) -> float:
    return f.value(x)


def gradient(f: FidelityTerm, x) -> np.ndarray:
    return f.gradient(x)


def lipschitz(f: FidelityTerm) -> float:
    return f.lipschitz
