"""Closed-form LS/BP estimators under l2 priors and their analytic MSE.

With ``A = U Lambda V^T`` and a prior whose ``D^T D = V Gamma^2 V^T``,
both estimators act independently on each right singular direction, so
bias and variance split into per-index sums.  The formulas take the
prior in this spectral form (``gamma_sq``); :func:`gamma_from_prior`
extracts it from a general ``D^T D`` and flags when that is only an
approximation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cg import conjugate_gradient
from .errors import ConvergenceError, NumericalError
from .linops import (
    CirculantConv2D,
    LinearOperator,
    SpectralDecomposition,
    pseudo_inverse_apply,
)
from .priors import L2Prior

CLOSED_CG_ITERS = 2000
CLOSED_CG_TOL = 1e-10
DENSE_SOLVE_MAX_N = 4096


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise, given by its std or by an SNR in dB."""

    sigma_e: float | None = None
    snr_db: float | None = None

    def __post_init__(self):
        if (self.sigma_e is None) == (self.snr_db is None):
            raise ValueError("set exactly one of sigma_e and snr_db")
        if self.sigma_e is not None and self.sigma_e < 0:
            raise ValueError("sigma_e must be non-negative")

    def sigma_for(self, y_clean) -> float:
        """Noise std to use for ``y_clean``.

        In SNR mode ``sigma^2 = ||y||^2 / (m 10^(snr/10))``.
        """
        if self.sigma_e is not None:
            return float(self.sigma_e)
        y_clean = np.asarray(y_clean, dtype=np.float64)
        return float(np.sqrt(np.sum(y_clean**2) / (y_clean.size * 10 ** (self.snr_db / 10))))


@dataclass(frozen=True)
class MseBreakdown:
    """Conditional MSE ``E||x_hat - x||^2 = bias_sq + variance``."""

    bias_sq: float
    variance: float
    per_index_bias: np.ndarray | None = field(default=None, repr=False, compare=False)
    per_index_var: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def mse(self) -> float:
        return self.bias_sq + self.variance

    @property
    def per_index(self) -> list[tuple[float, float]] | None:
        """``(bias^2_i, var_i)`` pairs, when requested at construction."""
        if self.per_index_bias is None:
            return None
        return list(zip(self.per_index_bias.tolist(), self.per_index_var.tolist()))


@dataclass(frozen=True)
class SubspaceConstraint:
    """``x`` lies in the orthogonal complement of the span of some columns of ``V``.

    Columns are numbered from 1 as in the singular-value order
    (``lambda_1 >= lambda_2 >= ...``); ``from_range(a, b)`` covers
    ``a <= i <= b``.
    """

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("subspace indices must be distinct")
        if any(i < 1 for i in idx):
            raise ValueError("subspace indices start at 1")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_range(cls, first: int, last: int):
        return cls(tuple(range(first, last + 1)))

    def columns(self) -> np.ndarray:
        """0-based column indices."""
        return np.asarray(self.indices, dtype=np.int64) - 1


# -- closed-form estimators ----------------------------------------------------


def _fft_path_ok(op, prior):
    return isinstance(op, CirculantConv2D) and prior.is_circulant


class ClosedFormSolver:
    """Reusable solver for ``x_LS = (A^T A + b D^T D)^{-1} A^T y`` or
    ``x_BP = (P_A + b D^T D)^{-1} A^+ y`` (with ``eps``-loaded ``A^+``).

    The factorization (or frequency response) is computed once, so
    ``solve`` is cheap across many observation vectors.  ``y`` may be a
    vector or an ``(m, k)`` array of column vectors.

    ``method``: ``"auto"`` picks FFT division for circulant operator and
    prior, a dense Cholesky for ``n <= 4096`` and CG otherwise.
    """

    def __init__(self, variant, op: LinearOperator, beta: float, prior: L2Prior | None = None,
                 eps: float = 0.0, method: str = "auto"):
        if beta <= 0:
            raise ValueError("beta must be positive")
        if eps < 0:
            raise ValueError("eps must be non-negative")
        if variant not in ("ls", "bp"):
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "ls" and eps != 0:
            raise ValueError("eps only applies to BP")
        self.variant = variant
        self.op = op
        self.beta = float(beta)
        self.eps = float(eps)
        self.prior = prior if prior is not None else L2Prior.identity()
        if method == "auto":
            if _fft_path_ok(op, self.prior):
                method = "fft"
            elif op.n <= DENSE_SOLVE_MAX_N:
                method = "dense"
            else:
                method = "cg"
        self.method = method
        if method == "fft":
            self._setup_fft()
        elif method == "dense":
            self._setup_dense()
        elif method != "cg":
            raise ValueError(f"unknown method {method!r}")

    def _setup_fft(self):
        if not _fft_path_ok(self.op, self.prior):
            raise ValueError("FFT path needs a circulant operator and prior")
        H = self.op.rfreq
        h2 = np.abs(H) ** 2
        R = self.prior.response(self.op.image_shape)
        if self.variant == "ls":
            self._response = np.conj(H) / (h2 + self.beta * R)
        else:
            proj = h2 / (h2 + self.eps)
            self._response = (np.conj(H) / (h2 + self.eps)) / (proj + self.beta * R)

    def _setup_dense(self):
        A = self.op.to_dense()
        DtD = self.prior.dense_dtd(self.op.n)
        if self.variant == "ls":
            M = A.T @ A + self.beta * DtD
            self._rhs_map = A.T
        else:
            G = A @ A.T
            G[np.diag_indices_from(G)] += self.eps
            W = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), A)  # G^{-1} A
            M = A.T @ W + self.beta * DtD
            self._rhs_map = W.T
        M = 0.5 * (M + M.T)
        self._chol = scipy.linalg.cho_factor(M)

    def _normal_apply(self, x):
        if self.variant == "ls":
            data = self.op.adjoint(self.op.apply(x))
        else:
            data = pseudo_inverse_apply(self.op, self.op.apply(x), self.eps)
        return data + self.beta * self.prior.dtd_apply(x)

    def rhs(self, y) -> np.ndarray:
        """Right-hand side ``A^T y`` (LS) or ``A_eps^+ y`` (BP) for one vector."""
        if self.variant == "ls":
            return self.op.adjoint(y)
        return pseudo_inverse_apply(self.op, y, self.eps)

    def solve(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.op.m:
            raise ValueError(f"observations must have {self.op.m} rows")
        if self.method == "fft":
            return self.op.filter_spectrum(self._response, y)
        if self.method == "dense":
            return scipy.linalg.cho_solve(self._chol, self._rhs_map @ y)
        if y.ndim == 2:
            return np.stack([self.solve(c) for c in y.T], axis=1)
        res = conjugate_gradient(self._normal_apply, self.rhs(y), iters=CLOSED_CG_ITERS, tol=CLOSED_CG_TOL)
        if not res.converged:
            raise ConvergenceError("closed-form CG did not converge", res.residuals[-1], len(res.residuals) - 1)
        return res.x


def solve_ls_closed(op, y, beta, prior: L2Prior | None = None, method: str = "auto") -> np.ndarray:
    """``(A^T A + beta D^T D)^{-1} A^T y``."""
    return ClosedFormSolver("ls", op, beta, prior, method=method).solve(y)


def solve_bp_closed(op, y, beta, eps: float = 0.0, prior: L2Prior | None = None,
                    method: str = "auto") -> np.ndarray:
    """``(P_A + beta D^T D)^{-1} A^+ y`` with ``A^+ = A^T (A A^T + eps I)^{-1}``."""
    return ClosedFormSolver("bp", op, beta, prior, eps=eps, method=method).solve(y)


# -- analytic MSE --------------------------------------------------------------


def _gamma_vec(gamma_sq, n):
    g = np.broadcast_to(np.asarray(gamma_sq, dtype=np.float64), (n,))
    if np.any(g <= 0):
        raise ValueError("gamma_sq must be positive")
    return g


def _breakdown(bias_i, var_i, per_index):
    if per_index:
        return MseBreakdown(float(bias_i.sum()), float(var_i.sum()), bias_i, var_i)
    return MseBreakdown(float(bias_i.sum()), float(var_i.sum()))


def mse_ls_analytic(spec: SpectralDecomposition, x, gamma_sq, beta: float, sigma_e: float,
                    per_index: bool = False, coeffs_sq=None) -> MseBreakdown:
    """Bias/variance of the LS estimator, conditioned on ``x``.

    Index ``i > m`` (null space) contributes ``[V^T x]_i^2`` to the bias.
    ``coeffs_sq`` may pass precomputed ``[V^T x]^2``.
    """
    n = spec.n
    c = spec.coefficients_sq(x) if coeffs_sq is None else np.asarray(coeffs_sq)
    g = _gamma_vec(gamma_sq, n)
    lam2 = spec.sq
    bg = beta * g
    bias_i = (bg / (lam2 + bg)) ** 2 * c
    var_i = sigma_e**2 * lam2 / (lam2 + bg) ** 2
    return _breakdown(bias_i, var_i, per_index)


def mse_bp_analytic(spec: SpectralDecomposition, x, gamma_sq, beta: float, sigma_e: float,
                    eps: float = 0.0, per_index: bool = False, coeffs_sq=None) -> MseBreakdown:
    """Bias/variance of the BP estimator, optionally with diagonal loading ``eps``.

    For ``eps > 0`` the row-space indicator becomes ``lam^2 / (lam^2 + eps)``
    and ``lam^-2`` in the variance becomes ``lam^2 / (lam^2 + eps)^2``.
    """
    n, m = spec.n, spec.m
    c = spec.coefficients_sq(x) if coeffs_sq is None else np.asarray(coeffs_sq)
    g = _gamma_vec(gamma_sq, n)
    lam2 = spec.sq
    bg = beta * g
    if eps == 0:
        w = np.zeros(n)
        w[:m] = 1.0
        inv = np.zeros(n)
        inv[:m] = 1.0 / lam2[:m]
    else:
        w = lam2 / (lam2 + eps)
        inv = lam2 / (lam2 + eps) ** 2
    bias_i = (bg / (w + bg)) ** 2 * c
    var_i = sigma_e**2 * inv / (w + bg) ** 2
    return _breakdown(bias_i, var_i, per_index)


# -- general D ----------------------------------------------------------------


@dataclass(frozen=True)
class GammaResult:
    """Diagonal of ``V^T D^T D V``; ``exact`` is False when off-diagonal
    energy remains (relative size in ``offdiag_ratio``)."""

    gamma_sq: np.ndarray
    exact: bool
    offdiag_ratio: float


def gamma_from_prior(prior: L2Prior, spec: SpectralDecomposition, exact_tol: float = 1e-8) -> GammaResult:
    """``gamma_i^2 = (V^T D^T D V)_ii`` in the singular-vector order of ``spec``."""
    n = spec.n
    if prior.kind == "identity":
        return GammaResult(np.ones(n), True, 0.0)
    if prior.kind == "spectral" and spec.V is not None and prior.basis is spec.V:
        return GammaResult(prior.gamma_sq.copy(), True, 0.0)

    if spec.V is not None:
        B = prior.dtd_apply(spec.V)
        gamma_sq = np.einsum("ij,ij->j", spec.V, B)
        total = float(np.sum(B * B))
    elif spec.fourier_order is not None:
        shape = spec.image_shape
        if prior.is_circulant:
            gamma_sq = spec.in_basis(prior.response(shape, real=False))
            return GammaResult(gamma_sq, True, 0.0)
        gamma_sq, total = _fourier_diag(prior, shape)
        gamma_sq = spec.in_basis(gamma_sq)
    else:
        raise ValueError("decomposition carries no basis")
    diag = float(np.sum(gamma_sq**2))
    ratio = max(total - diag, 0.0) / diag
    return GammaResult(gamma_sq, ratio <= exact_tol, ratio)


def _fourier_diag(prior, shape):
    """Diagonal of ``F^H M F`` (unitary DFT) plus ``||M F||_F^2`` for real symmetric ``M``."""
    h, w = shape
    n = h * w
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    diag = np.empty((h, w))
    total = 0.0
    for a in range(h):
        for b in range(w):
            phase = 2 * np.pi * (a * ii / h + b * jj / w)
            c = np.cos(phase).ravel()
            s = np.sin(phase).ravel()
            Mc = prior.dtd_apply(c)
            Ms = prior.dtd_apply(s)
            diag[a, b] = (c @ Mc + s @ Ms) / n
            # |M u|^2 for u = (c - i s)/sqrt(n)
            total += (Mc @ Mc + Ms @ Ms) / n
    return diag, total


# -- observations ----------------------------------------------------------------


@dataclass
class ObservationReport:
    """Checks of the three LS-vs-BP observations for one spectrum and ``x``."""

    regime: str
    obs1_ok: bool
    obs1_detail: list
    obs2_mse_ls: float
    obs2_mse_bp: float
    obs2_expected: str | None
    obs2_ok: bool | None
    obs3_beta_bp: float
    obs3_bias_ls: float
    obs3_bias_bp: float
    obs3_ok: bool
    obs3_strict_expected: bool
    obs3_strict_ok: bool

    def lines(self) -> list[str]:
        def verdict(ok):
            return "PASS" if ok else "FAIL"

        out = [f"Obs1: per-index bias/variance trade-off ({len(self.obs1_detail)} indices): {verdict(self.obs1_ok)}"]
        if self.regime == "below":
            out.append(f"Obs2: all λ<1 ⇒ MSE_BP<MSE_LS: {verdict(self.obs2_ok)}")
        elif self.regime == "above":
            out.append(f"Obs2: all λ>1 ⇒ MSE_BP>MSE_LS: {verdict(self.obs2_ok)}")
        else:
            rel = "<" if self.obs2_mse_bp < self.obs2_mse_ls else ">="
            out.append(f"Obs2: mixed spectrum, no ordering implied (MSE_BP {rel} MSE_LS)")
        out.append(
            f"Obs3: β_BP=β_LS/λ₁²={self.obs3_beta_bp:.6g} ⇒ Σbias²_BP≤Σbias²_LS: "
            f"{verdict(self.obs3_ok and self.obs3_strict_ok)}"
        )
        return out


def check_observations(spec: SpectralDecomposition, x, gamma_sq, beta_ls: float,
                       beta_bp: float | None = None, sigma_e: float = 0.0,
                       rtol: float = 1e-12) -> ObservationReport:
    """Evaluate the three LS/BP orderings on the per-index bias/variance terms.

    ``Obs1`` compares per-index terms at ``beta_bp`` (default ``beta_ls``)
    and noise ``sigma_e`` (1 when ``sigma_e`` is 0, since only the
    comparison matters).  ``Obs2`` compares noiseless MSEs at a common
    ``beta_ls``.  ``Obs3`` uses ``beta_bp = beta_ls / lambda_1^2``.
    ``rtol`` absorbs rounding when the two sides are mathematically equal.
    """
    m = spec.m
    lam = spec.singular_values
    c = spec.coefficients_sq(x)
    beta_bp = beta_ls if beta_bp is None else beta_bp
    s_for_var = sigma_e if sigma_e > 0 else 1.0

    ls = mse_ls_analytic(spec, x, gamma_sq, beta_ls, s_for_var, per_index=True, coeffs_sq=c)
    bp = mse_bp_analytic(spec, x, gamma_sq, beta_bp, s_for_var, per_index=True, coeffs_sq=c)
    detail = []
    obs1_ok = True
    for i in range(m):
        bl, bb = ls.per_index_bias[i], bp.per_index_bias[i]
        vl, vb = ls.per_index_var[i], bp.per_index_var[i]
        if lam[i] < 1:
            ok = (bb < bl or c[i] == 0) and vb > vl
        elif lam[i] > 1:
            ok = (bb > bl or c[i] == 0) and vb < vl
        else:
            ok = np.isclose(bb, bl, rtol=1e-12) and np.isclose(vb, vl, rtol=1e-12)
        if beta_bp != beta_ls:
            ok = True  # the observation is stated for a shared beta
        obs1_ok &= bool(ok)
        detail.append((float(lam[i]), float(bl), float(bb), float(vl), float(vb), bool(ok)))

    if np.all(lam < 1):
        regime = "below"
    elif np.all(lam > 1):
        regime = "above"
    else:
        regime = "mixed"
    ls0 = mse_ls_analytic(spec, x, gamma_sq, beta_ls, 0.0, coeffs_sq=c).mse
    bp0 = mse_bp_analytic(spec, x, gamma_sq, beta_ls, 0.0, coeffs_sq=c).mse
    if regime == "below":
        expected, obs2_ok = "bp<ls", bp0 < ls0
    elif regime == "above":
        expected, obs2_ok = "bp>ls", bp0 > ls0
    else:
        expected, obs2_ok = None, None

    beta3 = beta_ls / lam[0] ** 2
    ls3 = mse_ls_analytic(spec, x, gamma_sq, beta_ls, 0.0, per_index=True, coeffs_sq=c)
    bp3 = mse_bp_analytic(spec, x, gamma_sq, beta3, 0.0, per_index=True, coeffs_sq=c)
    s_ls = float(ls3.per_index_bias[:m].sum())
    s_bp = float(bp3.per_index_bias[:m].sum())
    obs3_ok = s_bp <= s_ls * (1 + rtol)
    strict_expected = bool(np.any((c[:m] > 0) & (lam < lam[0])))
    strict_ok = (s_bp < s_ls) if strict_expected else True

    return ObservationReport(
        regime=regime,
        obs1_ok=bool(obs1_ok),
        obs1_detail=detail,
        obs2_mse_ls=ls0,
        obs2_mse_bp=bp0,
        obs2_expected=expected,
        obs2_ok=obs2_ok,
        obs3_beta_bp=float(beta3),
        obs3_bias_ls=s_ls,
        obs3_bias_bp=s_bp,
        obs3_ok=bool(obs3_ok),
        obs3_strict_expected=strict_expected,
        obs3_strict_ok=bool(strict_ok),
    )


# -- subspace prior -------------------------------------------------------------


def project_out(spec: SpectralDecomposition, x0, constraint: SubspaceConstraint) -> np.ndarray:
    """Project ``x0`` onto the orthogonal complement of ``span(V[:, indices])``."""
    if spec.V is None:
        raise ValueError("subspace analysis needs a dense right basis")
    x0 = np.asarray(x0, dtype=np.float64)
    idx = constraint.columns()
    if idx.size == 0:
        return x0.copy()
    if idx.max() >= spec.n:
        raise ValueError(f"subspace index {idx.max() + 1} out of range for n={spec.n}")
    Vw = spec.V[:, idx]
    x = x0 - Vw @ (Vw.T @ x0)
    resid = np.abs(Vw.T @ x).max()
    if resid > 1e-10 * max(1.0, np.linalg.norm(x0)):
        raise NumericalError(f"projection left coefficients of size {resid:.3e}")
    return x


def subspace_mse(spec: SpectralDecomposition, x0, constraint: SubspaceConstraint, gamma_sq,
                 beta: float, sigma_e: float) -> tuple[MseBreakdown, MseBreakdown]:
    """(LS, BP) breakdowns for ``x0`` projected onto the constraint set."""
    x = project_out(spec, x0, constraint)
    c = spec.coefficients_sq(x)
    c[constraint.columns()] = 0.0
    return (
        mse_ls_analytic(spec, x, gamma_sq, beta, sigma_e, coeffs_sq=c),
        mse_bp_analytic(spec, x, gamma_sq, beta, sigma_e, coeffs_sq=c),
    )
