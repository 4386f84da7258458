"""Prior terms and their proximal mappings.

A prior exposes ``prox(z, t) = argmin_x 1/2 ||z - x||^2 + t s(x)`` and,
when it has one, ``value(x) = s(x)``.  Black-box denoisers plug in through
:class:`DenoiserAdapter`, using ``D(z; sigma) = prox_{sigma^2 s}(z)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.ndimage

from . import kernels
from .cg import conjugate_gradient
from .errors import ConvergenceError, DimensionError, ShapeError

TV_WEIGHT = 0.1
FD_LOADING = 0.01


def _laplacian_symbol(shape, real=True):
    """Eigenvalues of ``grad^T grad`` (circular forward differences)."""
    h, w = shape
    fy = np.fft.fftfreq(h)
    fx = np.fft.rfftfreq(w) if real else np.fft.fftfreq(w)
    return (4 * np.sin(np.pi * fy)[:, None] ** 2) + (4 * np.sin(np.pi * fx)[None, :] ** 2)


# -- l2 family -----------------------------------------------------------------


class L2Prior:
    """Tikhonov prior ``s(x) = 1/2 ||D x||^2`` described through ``D^T D``.

    Use the constructors: :meth:`identity`, :meth:`finite_difference`,
    :meth:`sparse_finite_difference`, :meth:`dense`, :meth:`spectral`.
    """

    def __init__(self, kind, image_shape=None, dtd=None, gamma_sq=None, basis=None,
                 stride=8, loading=0.0):
        self.kind = kind
        self.image_shape = None if image_shape is None else (int(image_shape[0]), int(image_shape[1]))
        self._dtd = dtd
        self.gamma_sq = gamma_sq
        self.basis = basis
        self.stride = stride
        self.loading = loading

    def __repr__(self):
        return f"L2Prior({self.kind!r})"

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def finite_difference(cls, image_shape, loading=FD_LOADING):
        """``Omega^T Omega + loading I`` with circular forward differences."""
        return cls("fd2d", image_shape=image_shape, loading=loading)

    @classmethod
    def sparse_finite_difference(cls, image_shape, stride=8, loading=FD_LOADING):
        """Finite differences at every ``stride``-th pixel (flat index), identity elsewhere."""
        return cls("sparse_fd", image_shape=image_shape, stride=stride, loading=loading)

    @classmethod
    def dense(cls, dtd):
        dtd = np.asarray(dtd, dtype=np.float64)
        if dtd.ndim != 2 or dtd.shape[0] != dtd.shape[1]:
            raise DimensionError("D^T D must be square")
        if not np.allclose(dtd, dtd.T, atol=1e-12 * max(1.0, np.abs(dtd).max())):
            raise ValueError("D^T D must be symmetric")
        if np.linalg.eigvalsh(dtd)[0] <= 0:
            raise ValueError("D^T D must be positive definite")
        return cls("dense", dtd=dtd)

    @classmethod
    def spectral(cls, V, gamma_sq):
        """``D^T D = V diag(gamma_sq) V^T`` for an orthogonal ``V``."""
        gamma_sq = np.asarray(gamma_sq, dtype=np.float64)
        if np.any(gamma_sq <= 0):
            raise ValueError("gamma_sq must be strictly positive")
        return cls("spectral", gamma_sq=gamma_sq, basis=np.asarray(V))

    @property
    def is_circulant(self) -> bool:
        return self.kind in ("identity", "fd2d")

    def response(self, shape, real=True) -> np.ndarray:
        """Eigenvalues of a circulant ``D^T D`` on the DFT grid of ``shape``."""
        if self.kind == "identity":
            h, w = shape
            return np.ones((h, w // 2 + 1) if real else (h, w))
        if self.kind == "fd2d":
            return _laplacian_symbol(shape, real) + self.loading
        raise ValueError(f"{self.kind} prior is not circulant")

    def _shape_of(self, x):
        if self.image_shape is None:
            raise ShapeError(f"{self.kind} prior needs an image shape")
        h, w = self.image_shape
        if x.shape[0] != h * w:
            raise DimensionError(f"expected length {h * w}, got {x.shape[0]}")
        return h, w

    def dtd_apply(self, x) -> np.ndarray:
        """``D^T D x`` for ``x`` of shape ``(n,)`` or ``(n, k)``."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "dense":
            return self._dtd @ x
        if self.kind == "spectral":
            V = self.basis
            g = self.gamma_sq if x.ndim == 1 else self.gamma_sq[:, None]
            return V @ (g * (V.T @ x))
        h, w = self._shape_of(x)
        if x.ndim == 2:
            return np.stack([self.dtd_apply(c) for c in x.T], axis=1)
        img = x.reshape(h, w)
        if self.kind == "fd2d":
            gx, gy = kernels.grad2d(img)
            out = kernels.grad2d_adjoint(gx, gy)
        else:
            mask = (np.arange(h * w) % self.stride == 0).reshape(h, w)
            gx, gy = kernels.grad2d(img)
            out = kernels.grad2d_adjoint(gx * mask, gy * mask) + np.where(mask, 0.0, img)
        return out.ravel() + self.loading * x

    def dense_dtd(self, n: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(n)
        if self.kind == "dense":
            return self._dtd.copy()
        return self.dtd_apply(np.eye(n))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(x @ self.dtd_apply(x))

    def prox(self, z, t):
        return l2_prox(z, t, self)


def l2_prox(z, t: float, prior: L2Prior, tol: float = 1e-12, maxiter: int = 2000) -> np.ndarray:
    """Solve ``(I + t D^T D) x = z``."""
    z = np.asarray(z, dtype=np.float64)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return z.copy()
    if prior.kind == "identity":
        return z / (1.0 + t)
    if prior.kind == "spectral":
        V = prior.basis
        return V @ ((V.T @ z) / (1.0 + t * prior.gamma_sq))
    if prior.kind == "fd2d":
        h, w = prior._shape_of(z)
        Z = np.fft.rfft2(z.reshape(h, w))
        return np.fft.irfft2(Z / (1.0 + t * prior.response((h, w))), s=(h, w)).ravel()
    if prior.kind == "dense" and z.shape[0] <= 4096:
        M = np.eye(z.shape[0]) + t * prior._dtd
        return np.linalg.solve(M, z)
    res = conjugate_gradient(lambda u: u + t * prior.dtd_apply(u), z, iters=maxiter, tol=tol)
    if not res.converged:
        raise ConvergenceError("l2 prox CG did not converge", res.residuals[-1], len(res.residuals) - 1)
    return res.x


# -- total variation -----------------------------------------------------------


@dataclass(frozen=True)
class TvConfig:
    """Split-Bregman settings for the TV proximal map.

    ``rho`` is the splitting penalty; ``None`` means ``rho_factor`` times the
    effective TV weight ``weight * t``.
    """

    weight: float = TV_WEIGHT
    inner_iters: int = 20
    inner_tol: float = 1e-4
    rho: float | None = None
    rho_factor: float = 0.2

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")


def _as_image(x, shape):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if shape is None:
        raise ShapeError("TV needs a 2D image or an explicit shape")
    h, w = shape
    if x.size != h * w:
        raise ShapeError(f"cannot view length {x.size} as {shape}")
    return x.reshape(h, w)


def tv_value(x, shape=None, weight: float = TV_WEIGHT) -> float:
    """Isotropic TV, ``weight * sum sqrt(dx^2 + dy^2)`` with circular wrap."""
    return weight * kernels.tv_norm(_as_image(x, shape))


def tv_prox(z, t: float, shape=None, cfg: TvConfig = TvConfig()) -> np.ndarray:
    """Approximate ``argmin_x 1/2 ||z - x||^2 + t * tv_value(x)`` by split Bregman.

    Returns an array with the same shape as ``z``.  The result is never
    worse than ``z`` itself in the composite objective.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    z = np.asarray(z, dtype=np.float64)
    img = _as_image(z, shape)
    h, w = img.shape
    lam = cfg.weight * t
    rho = cfg.rho if cfg.rho is not None else cfg.rho_factor * lam
    thr = lam / rho
    denom = 1.0 + rho * _laplacian_symbol((h, w))
    Z = np.fft.rfft2(img)

    x = img.copy()
    dx = np.zeros((h, w))
    dy = np.zeros((h, w))
    bx = np.zeros((h, w))
    by = np.zeros((h, w))
    for _ in range(cfg.inner_iters):
        rhs = kernels.sb_shrink_update(x, dx, dy, bx, by, thr)
        x_new = np.fft.irfft2((Z + rho * np.fft.rfft2(rhs)) / denom, s=(h, w))
        change = np.linalg.norm(x_new - x)
        x = x_new
        if change <= cfg.inner_tol * max(np.linalg.norm(x), 1e-300):
            break

    obj_x = 0.5 * float(np.sum((x - img) ** 2)) + t * tv_value(x, weight=cfg.weight)
    if obj_x > t * tv_value(img, weight=cfg.weight):
        x = img.copy()
    return x.reshape(z.shape)


class TVPrior:
    """Isotropic TV prior on images of ``image_shape`` (vectorized signals)."""

    def __init__(self, image_shape, cfg: TvConfig = TvConfig()):
        self.image_shape = (int(image_shape[0]), int(image_shape[1]))
        self.cfg = cfg

    def __repr__(self):
        return f"TVPrior({self.image_shape})"

    def value(self, x) -> float:
        return tv_value(x, self.image_shape, self.cfg.weight)

    def prox(self, z, t):
        return tv_prox(z, t, self.image_shape, self.cfg)


# -- denoisers -----------------------------------------------------------------


Denoiser = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class DenoiserAdapter:
    """Wrap a Gaussian denoiser ``D(z; sigma)`` as a proximal mapping.

    ``thread_safe=False`` tells the sweep harness to serialize calls.
    Denoisers built from a proximal map (``l2_denoiser``, ``tv_denoiser``)
    carry it as a ``prox`` attribute; it is then called directly so that
    no ``sqrt(t)**2`` rounding creeps in.
    """

    denoiser: Denoiser
    name: str = "denoiser"
    thread_safe: bool = True

    def prox(self, z, t):
        direct = getattr(self.denoiser, "prox", None)
        if direct is not None:
            return direct(z, t)
        return self.denoiser(z, math.sqrt(t))

    def __call__(self, z, sigma):
        return self.denoiser(z, sigma)

    value = None


def as_prox(adapter) -> Callable[[np.ndarray, float], np.ndarray]:
    """Return ``(z, t) -> D(z; sqrt(t))`` for a denoiser or adapter."""
    if not isinstance(adapter, DenoiserAdapter):
        adapter = DenoiserAdapter(adapter)
    return adapter.prox


def identity_denoiser(z, sigma):
    return np.array(z, dtype=np.float64, copy=True)


def l2_denoiser(prior: L2Prior) -> Denoiser:
    """Denoiser whose prox is the l2 prox: ``D(z; sigma) = l2_prox(z, sigma^2)``."""

    def denoise(z, sigma):
        return l2_prox(z, sigma * sigma, prior)

    denoise.prox = lambda z, t: l2_prox(z, t, prior)
    return denoise


def median_denoiser(image_shape, size: int = 3) -> Denoiser:
    """Median filter (circular boundary); ignores the noise level."""
    h, w = image_shape

    def denoise(z, sigma):
        z = np.asarray(z, dtype=np.float64)
        return scipy.ndimage.median_filter(z.reshape(h, w), size=size, mode="wrap").reshape(z.shape)

    return denoise


def tv_denoiser(image_shape, cfg: TvConfig = TvConfig()) -> Denoiser:
    def denoise(z, sigma):
        return tv_prox(z, sigma * sigma, image_shape, cfg)

    denoise.prox = lambda z, t: tv_prox(z, t, image_shape, cfg)
    return denoise


def make_denoiser(name: str, image_shape) -> DenoiserAdapter:
    """Build one of the bundled denoisers by name: identity, l2, median, tv."""
    if name == "identity":
        fn = identity_denoiser
    elif name == "l2":
        fn = l2_denoiser(L2Prior.identity())
    elif name == "median":
        fn = median_denoiser(image_shape)
    elif name == "tv":
        fn = tv_denoiser(image_shape)
    else:
        raise ValueError(f"unknown denoiser {name!r} (choose identity, l2, median, tv)")
    return DenoiserAdapter(fn, name=name)
