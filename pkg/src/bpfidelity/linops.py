"""Linear forward operators, pseudo-inverses and spectral analysis.

Every operator maps a length-``n`` signal to ``m <= n`` observations and
has full row rank.  Images are vectorized row-major.  Convolutions use
circular (periodic) boundaries throughout, so blur operators are
diagonalized by the 2D DFT.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import kernels
from .cg import conjugate_gradient
from .errors import ConvergenceError, DimensionError, UnsupportedScale

MAX_DENSE_N = 8192
PINV_CG_ITERS = 500
PINV_CG_TOL = 1e-10
PINV_DENSE_MAX_M = 2048  # composites with few rows factor A A^T once
_FACTOR_LOCK = threading.Lock()


def gaussian_kernel(size: int = 7, sigma: float = 1.6) -> np.ndarray:
    """Sampled isotropic Gaussian on the integer grid, normalized to sum 1."""
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def uniform_kernel(size: int = 9) -> np.ndarray:
    return np.full((size, size), 1.0 / size**2)


class LinearOperator:
    """An ``m x n`` full-row-rank matrix known through ``apply``/``adjoint``.

    Subclasses implement ``_matvec`` and ``_rmatvec``; batched variants
    ``_matmat``/``_rmatmat`` act on ``(n, k)`` / ``(m, k)`` arrays and
    default to column loops.  ``row_orthonormal`` marks operators with
    ``A A^T = I`` so that the pseudo-inverse reduces to the adjoint.
    """

    kind = "generic"
    row_orthonormal = False

    def __init__(self, shape: tuple[int, int], in_shape: tuple[int, int] | None = None):
        m, n = int(shape[0]), int(shape[1])
        if m > n:
            raise DimensionError(f"operators must have m <= n, got {m} x {n}")
        self.shape = (m, n)
        self.in_shape = in_shape

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def n(self) -> int:
        return self.shape[1]

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, n={self.n})"

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.n:
            raise DimensionError(f"{self!r}.apply expects length {self.n}, got shape {x.shape}")
        return self._matvec(x)

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.m:
            raise DimensionError(f"{self!r}.adjoint expects length {self.m}, got shape {v.shape}")
        return self._rmatvec(v)

    def matmat(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.n:
            raise DimensionError(f"{self!r}.matmat expects ({self.n}, k), got {X.shape}")
        return self._matmat(X)

    def rmatmat(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != self.m:
            raise DimensionError(f"{self!r}.rmatmat expects ({self.m}, k), got {Y.shape}")
        return self._rmatmat(Y)

    def to_dense(self) -> np.ndarray:
        if self.n > MAX_DENSE_N:
            raise UnsupportedScale(f"n={self.n} exceeds the dense limit {MAX_DENSE_N}")
        return self._matmat(np.eye(self.n))

    # -- hooks -------------------------------------------------------------
    def _matvec(self, x):
        raise NotImplementedError

    def _rmatvec(self, v):
        raise NotImplementedError

    def _matmat(self, X):
        return np.stack([self._matvec(c) for c in X.T], axis=1)

    def _rmatmat(self, Y):
        return np.stack([self._rmatvec(c) for c in Y.T], axis=1)

    def _gram_solve(self, v, eps):
        """Fast ``(A A^T + eps I)^{-1} v`` or ``None`` when not available."""
        if self.row_orthonormal:
            return v / (1.0 + eps)
        return None


class Identity(LinearOperator):
    kind = "identity"
    row_orthonormal = True

    def __init__(self, n: int, in_shape=None):
        super().__init__((n, n), in_shape)

    def _matvec(self, x):
        return x.copy()

    _rmatvec = _matvec

    def _matmat(self, X):
        return X.copy()

    _rmatmat = _matmat


class InpaintMask(LinearOperator):
    """Selection of the rows ``kept`` of the ``n x n`` identity."""

    kind = "inpaint"
    row_orthonormal = True

    def __init__(self, kept: Sequence[int], n: int, in_shape=None):
        kept = np.unique(np.asarray(kept, dtype=np.int64))
        if kept.size == 0 or kept[0] < 0 or kept[-1] >= n:
            raise DimensionError(f"kept indices must lie in [0, {n})")
        self.kept = kept
        super().__init__((kept.size, n), in_shape)

    def _matvec(self, x):
        return x[self.kept]

    def _rmatvec(self, v):
        out = np.zeros(self.n)
        out[self.kept] = v
        return out

    def _matmat(self, X):
        return X[self.kept]

    def _rmatmat(self, Y):
        out = np.zeros((self.n, Y.shape[1]))
        out[self.kept] = Y
        return out


class CirculantConv2D(LinearOperator):
    """2D convolution with circular boundary, computed with the DFT.

    The kernel centre is at index ``(kh // 2, kw // 2)``.
    """

    kind = "circulant"

    def __init__(self, kernel, image_shape: tuple[int, int]):
        kernel = np.asarray(kernel, dtype=np.float64)
        h, w = image_shape
        if kernel.ndim != 2 or kernel.shape[0] > h or kernel.shape[1] > w:
            raise DimensionError(f"kernel {kernel.shape} does not fit image {image_shape}")
        self.kernel = kernel
        self.image_shape = (int(h), int(w))
        super().__init__((h * w, h * w), self.image_shape)
        padded = np.zeros(self.image_shape)
        padded[: kernel.shape[0], : kernel.shape[1]] = kernel
        padded = np.roll(padded, (-(kernel.shape[0] // 2), -(kernel.shape[1] // 2)), axis=(0, 1))
        self.psf = padded
        self.rfreq = np.fft.rfft2(padded)

    @cached_property
    def freq(self) -> np.ndarray:
        """Full 2D DFT of the (centred, zero-padded) kernel."""
        return np.fft.fft2(self.psf)

    def _filter(self, x, H):
        h, w = self.image_shape
        X = x.reshape(h, w, -1)
        out = np.fft.irfft2(np.fft.rfft2(X, axes=(0, 1)) * H[:, :, None], s=(h, w), axes=(0, 1))
        return out.reshape(x.shape)

    def _matvec(self, x):
        return self._filter(x, self.rfreq)

    def _rmatvec(self, v):
        return self._filter(v, np.conj(self.rfreq))

    _matmat = _matvec
    _rmatmat = _rmatvec

    def _gram_solve(self, v, eps):
        h, w = self.image_shape
        V = np.fft.rfft2(v.reshape(h, w))
        return np.fft.irfft2(V / (np.abs(self.rfreq) ** 2 + eps), s=(h, w)).ravel()

    def filter_spectrum(self, response: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Multiply ``x`` by a real-input frequency response (rfft2 layout)."""
        return self._filter(np.asarray(x, dtype=np.float64), response)


class Downsample2D(LinearOperator):
    """Keep pixel (0, 0) and every ``factor``-th pixel after it in each axis."""

    kind = "downsample"
    row_orthonormal = True

    def __init__(self, factor: int, image_shape: tuple[int, int]):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = int(factor)
        self.image_shape = (int(image_shape[0]), int(image_shape[1]))
        h, w = self.image_shape
        self.out_shape = (-(-h // factor), -(-w // factor))
        super().__init__((self.out_shape[0] * self.out_shape[1], h * w), self.image_shape)

    def _matvec(self, x):
        h, w = self.image_shape
        k = self.factor
        X = x.reshape(h, w, -1)[::k, ::k]
        return X.reshape((self.m,) + x.shape[1:])

    def _rmatvec(self, v):
        h, w = self.image_shape
        k = self.factor
        out = np.zeros((h, w) + v.shape[1:])
        out[::k, ::k] = v.reshape(self.out_shape + v.shape[1:])
        return out.reshape((self.n,) + v.shape[1:])

    _matmat = _matvec
    _rmatmat = _rmatvec


class Composite(LinearOperator):
    """Product of operators in mathematical order: ``Composite(B, C) = B @ C``."""

    kind = "composite"

    def __init__(self, *ops: LinearOperator):
        if not ops:
            raise ValueError("Composite needs at least one operator")
        for outer, inner in zip(ops[:-1], ops[1:]):
            if outer.n != inner.m:
                raise DimensionError(f"cannot compose {outer!r} after {inner!r}")
        self.ops = tuple(ops)
        self.row_orthonormal = all(op.row_orthonormal for op in ops)
        super().__init__((ops[0].m, ops[-1].n), ops[-1].in_shape)

    def _matvec(self, x):
        for op in reversed(self.ops):
            x = op._matvec(x)
        return x

    def _rmatvec(self, v):
        for op in self.ops:
            v = op._rmatvec(v)
        return v

    def _matmat(self, X):
        for op in reversed(self.ops):
            X = op._matmat(X)
        return X

    def _rmatmat(self, Y):
        for op in self.ops:
            Y = op._rmatmat(Y)
        return Y

    def _gram_solve(self, v, eps):
        # B C with C C^T = I has the same Gram matrix as B
        if all(op.row_orthonormal for op in self.ops[1:]):
            return self.ops[0]._gram_solve(v, eps)
        if self.m <= PINV_DENSE_MAX_M:
            return scipy.linalg.cho_solve(self._factor(float(eps)), v)
        return None

    def _factor(self, eps):
        with _FACTOR_LOCK:
            cache = self.__dict__.setdefault("_chol", {})
            fac = cache.get(eps)
            if fac is None:
                G = self._matmat(self._rmatmat(np.eye(self.m)))
                G = 0.5 * (G + G.T)
                G[np.diag_indices_from(G)] += eps
                fac = scipy.linalg.cho_factor(G, lower=True)
                cache[eps] = fac
            return fac


class DenseMatrix(LinearOperator):
    """Explicit matrix.  Pseudo-inverses use a cached Cholesky factor of ``A A^T``."""

    kind = "dense"

    def __init__(self, matrix, check_rank: bool = True, in_shape=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionError("DenseMatrix needs a 2D array")
        self._matrix = matrix
        super().__init__(matrix.shape, in_shape)
        self._init_cache()
        if check_rank and min(matrix.shape) <= 2048:
            rank = np.linalg.matrix_rank(matrix)
            if rank != matrix.shape[0]:
                raise DimensionError(f"matrix has rank {rank} < m={matrix.shape[0]}")

    def _init_cache(self):
        self._chol = {}
        self._lock = threading.Lock()

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, v):
        return self.matrix.T @ v

    _matmat = _matvec
    _rmatmat = _rmatvec

    def to_dense(self):
        return self.matrix.copy()

    def _factor(self, eps):
        with self._lock:
            fac = self._chol.get(eps)
            if fac is None:
                A = self.matrix
                G = A @ A.T
                G[np.diag_indices_from(G)] += eps
                fac = scipy.linalg.cho_factor(G, lower=True)
                self._chol[eps] = fac
            return fac

    def _gram_solve(self, v, eps):
        return scipy.linalg.cho_solve(self._factor(float(eps)), v)


class GaussianMeasurement(DenseMatrix):
    """``m x n`` matrix with i.i.d. N(0, 1/m) entries from a seeded PCG64 stream.

    The matrix is drawn lazily, so dimensions are available without
    allocating it.
    """

    kind = "gaussian"

    def __init__(self, m: int, n: int, seed: int = 0, in_shape=None):
        self.seed = int(seed)
        LinearOperator.__init__(self, (m, n), in_shape)
        self._init_cache()

    @cached_property
    def matrix(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal(self.shape) / np.sqrt(self.m)


class HaarBasis2D(LinearOperator):
    """Orthonormal multi-level 2D Haar analysis (image -> coefficients)."""

    kind = "haar"
    row_orthonormal = True

    def __init__(self, image_shape: tuple[int, int]):
        self.image_shape = (int(image_shape[0]), int(image_shape[1]))
        h, w = self.image_shape
        super().__init__((h * w, h * w), self.image_shape)

    def _matvec(self, x):
        return kernels.haar_forward(x.reshape(self.image_shape)).ravel()

    def _rmatvec(self, v):
        return kernels.haar_inverse(v.reshape(self.image_shape)).ravel()


# -- module-level operations -------------------------------------------------


def apply(op: LinearOperator, x) -> np.ndarray:
    return op.apply(x)


def adjoint(op: LinearOperator, v) -> np.ndarray:
    return op.adjoint(v)


def gram_solve(op: LinearOperator, v, eps: float = 0.0) -> np.ndarray:
    """Return ``(A A^T + eps I)^{-1} v``.

    Uses the operator's fast path when it has one, otherwise conjugate
    gradients (cap ``PINV_CG_ITERS``, relative tolerance ``PINV_CG_TOL``).
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != op.m:
        raise DimensionError(f"expected length {op.m}, got shape {v.shape}")
    fast = op._gram_solve(v, eps)
    if fast is not None:
        return fast

    def gram(u):
        return op._matvec(op._rmatvec(u)) + eps * u

    res = conjugate_gradient(gram, v, iters=PINV_CG_ITERS, tol=PINV_CG_TOL)
    if not res.converged:
        raise ConvergenceError(
            f"pseudo-inverse CG did not reach {PINV_CG_TOL:g} in {PINV_CG_ITERS} iterations "
            f"(residual {res.residuals[-1]:.3e})",
            residual=res.residuals[-1],
            iterations=len(res.residuals) - 1,
        )
    return res.x


def pseudo_inverse_apply(op: LinearOperator, v, eps: float = 0.0) -> np.ndarray:
    """Back-projection ``A^T (A A^T + eps I)^{-1} v``."""
    return op._rmatvec(gram_solve(op, v, eps))


def project_rowspace(op: LinearOperator, x, eps: float = 0.0) -> np.ndarray:
    """``A^+ A x``; the orthogonal projection onto the row space when ``eps == 0``."""
    return pseudo_inverse_apply(op, op.apply(x), eps)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Singular values (descending) and right singular basis of ``A``.

    ``V`` is the dense ``n x n`` right basis when available.  For circulant
    operators the basis is the unitary 2D DFT instead; ``fourier_order``
    then holds the permutation of flattened DFT bins matching
    ``singular_values`` and ``V`` is ``None``.
    """

    singular_values: np.ndarray
    n: int
    V: np.ndarray | None = None
    U: np.ndarray | None = None
    fourier_order: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None

    @property
    def m(self) -> int:
        return int(self.singular_values.shape[0])

    @property
    def sq(self) -> np.ndarray:
        """Squared singular values padded with zeros to length ``n``."""
        out = np.zeros(self.n)
        out[: self.m] = self.singular_values**2
        return out

    def coefficients_sq(self, x) -> np.ndarray:
        """``[V^T x]_i^2`` for ``i = 1..n`` in singular-value order."""
        x = np.asarray(x, dtype=np.float64)
        if self.V is not None:
            return (self.V.T @ x) ** 2
        if self.fourier_order is None:
            raise ValueError("decomposition carries no basis")
        X = np.fft.fft2(x.reshape(self.image_shape)).ravel()
        return (np.abs(X) ** 2 / self.n)[self.fourier_order]

    def in_basis(self, values) -> np.ndarray:
        """Reorder a per-frequency array (full fft2 layout) into singular-value order."""
        if self.fourier_order is None:
            raise ValueError("not a Fourier decomposition")
        return np.asarray(values).ravel()[self.fourier_order]


def spectrum(op: LinearOperator, compute_u: bool = False) -> SpectralDecomposition:
    """Singular value decomposition of ``op``.

    Circulant operators use the DFT magnitudes of the kernel.  Anything
    else is materialized and passed to a dense SVD, which is limited to
    ``n <= MAX_DENSE_N``.
    """
    if isinstance(op, CirculantConv2D):
        mags = np.abs(op.freq).ravel()
        order = np.argsort(-mags, kind="stable")
        return SpectralDecomposition(
            singular_values=mags[order], n=op.n, fourier_order=order, image_shape=op.image_shape
        )
    if op.n > MAX_DENSE_N:
        raise UnsupportedScale(f"dense SVD limited to n <= {MAX_DENSE_N}, got {op.n}")
    A = op.to_dense()
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    return SpectralDecomposition(
        singular_values=s,
        n=op.n,
        V=Vt.T,
        U=U if compute_u else None,
        image_shape=op.in_shape,
    )


class PowerEstimate(NamedTuple):
    value: float
    iterations: int
    converged: bool


def power_method(
    sym_apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    iters: int = 500,
    tol: float = 1e-10,
    seed: int = 0,
) -> PowerEstimate:
    """Largest eigenvalue of a symmetric PSD map by power iteration."""
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for k in range(1, iters + 1):
        w = sym_apply(v)
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return PowerEstimate(0.0, k, True)
        v = w / nrm
        if k > 1 and abs(new - est) <= tol * abs(new):
            return PowerEstimate(new, k, True)
        est = new
    return PowerEstimate(est, iters, False)


def sq_spectral_norm(op: LinearOperator, iters: int = 500, tol: float = 1e-10, seed: int = 0) -> PowerEstimate:
    """Power-method estimate of ``||A^T A|| = lambda_1^2``."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    return power_method(lambda u: op._rmatvec(op._matvec(u)), op.n, iters, tol, seed)


def condition_number_sq(spec: SpectralDecomposition) -> float:
    """``lambda_1^2 / lambda_m^2``, the condition number of ``A A^T``."""
    s = spec.singular_values
    return float(s[0] ** 2 / s[-1] ** 2)
