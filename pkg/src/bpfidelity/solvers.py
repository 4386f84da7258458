"""Iterative solvers: proximal gradient (ISTA/FISTA) and IDBP."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cg import CGResult, conjugate_gradient
from .fidelity import BP, FidelityTerm
from .linops import LinearOperator, pseudo_inverse_apply
from .priors import DenoiserAdapter

__all__ = [
    "CGResult",
    "conjugate_gradient",
    "ProxStepConfig",
    "IdbpConfig",
    "IterTrace",
    "prox_gradient",
    "idbp",
    "equivalence_check",
    "LS_STEP_MARGIN",
]

LS_STEP_MARGIN = 1.01

ProxFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class ProxStepConfig:
    """Settings for ``x <- prox_{mu beta s}(x - mu grad l(x))``.

    ``step=None`` picks ``1/L``: exactly 1 for BP, ``1/(1.01 lambda_1^2)``
    for LS with the power-method estimate.  ``momentum="nesterov"`` turns
    ISTA into FISTA.
    """

    beta: float
    iters: int = 100
    step: float | None = None
    momentum: str | None = None
    record_trace: bool = True
    keep_iterates: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.momentum not in (None, "nesterov"):
            raise ValueError(f"unknown momentum {self.momentum!r}")


@dataclass(frozen=True)
class IdbpConfig:
    """IDBP settings; the denoiser runs at noise level ``sigma_e + delta``.

    ``delta=None`` means 0 for noisy data and ``1e-3 * 255`` when
    ``sigma_e == 0``.
    """

    sigma_e: float
    delta: float | None = None
    iters: int = 200
    eps: float = 0.0

    def __post_init__(self):
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be non-negative")
        if self.delta is None:
            object.__setattr__(self, "delta", 0.0 if self.sigma_e > 0 else 1e-3 * 255)
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.sigma_e + self.delta <= 0:
            raise ValueError("sigma_e + delta must be positive")

    @property
    def level(self) -> float:
        return self.sigma_e + self.delta

    @property
    def beta(self) -> float:
        """The equivalent BP regularization weight ``(sigma_e + delta)^2``."""
        return self.level**2


@dataclass
class IterTrace:
    """Per-iteration records (objective is NaN when the prior has no value)."""

    objective: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    iterates: list | None = None
    step: float = float("nan")

    def __len__(self):
        return len(self.residual)


def _psnr(x, ref):
    err = float(np.mean((x - ref) ** 2))
    return math.inf if err == 0 else 10 * math.log10(255.0**2 / err)


def _resolve_prox(prior) -> tuple[ProxFn, Callable | None]:
    if hasattr(prior, "prox"):
        return prior.prox, getattr(prior, "value", None)
    if callable(prior):
        return prior, None
    raise TypeError("prior must be a prox callable or expose .prox")


def _record(trace, x, prev, fid, beta, prior_value, ground_truth, record_objective):
    if record_objective:
        obj = fid.value(x)
        obj = obj + beta * prior_value(x) if prior_value is not None else math.nan
        trace.objective.append(obj)
    if ground_truth is not None:
        trace.psnr.append(_psnr(x, ground_truth))
    trace.residual.append(float(np.linalg.norm(x - prev)))
    if trace.iterates is not None:
        trace.iterates.append(x.copy())


def prox_gradient(fid: FidelityTerm, prior, cfg: ProxStepConfig, x0=None,
                  prior_value: Callable | None = None, ground_truth=None) -> tuple[np.ndarray, IterTrace]:
    """ISTA/FISTA on ``l(x) + beta s(x)``.

    Args:
        fid: the data term ``l``.
        prior: ``(z, t) -> argmin_x 1/2||z - x||^2 + t s(x)``, or an object
            with a ``prox`` method (and optionally ``value``).
        cfg: step, weight, iteration count and momentum.
        x0: starting point (zeros by default).
        prior_value: ``s(x)``, used for the objective trace.
        ground_truth: when given, PSNR is traced.

    Returns:
        The last iterate and the trace.  The objective trace is only
        filled when ``cfg.record_trace`` is set.
    """
    prox, default_value = _resolve_prox(prior)
    prior_value = prior_value if prior_value is not None else default_value
    n = fid.op.n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    if ground_truth is not None:
        ground_truth = np.asarray(ground_truth, dtype=np.float64)

    if cfg.step is not None:
        mu = float(cfg.step)
    elif fid.variant == BP:
        mu = 1.0
    else:
        mu = 1.0 / (LS_STEP_MARGIN * fid.lipschitz)
    scale = mu * cfg.beta
    trace = IterTrace(iterates=[] if cfg.keep_iterates else None, step=mu)

    v = x
    t = 1.0
    for _ in range(cfg.iters):
        x_new = prox(v - mu * fid.gradient(v), scale)
        if cfg.momentum == "nesterov":
            t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
            v = x_new + ((t - 1) / t_next) * (x_new - x)
            t = t_next
        else:
            v = x_new
        _record(trace, x_new, x, fid, cfg.beta, prior_value, ground_truth, cfg.record_trace)
        x = x_new
    return x, trace


def idbp(op: LinearOperator, y, denoiser, cfg: IdbpConfig, x0=None, ground_truth=None,
         keep_iterates: bool = False) -> tuple[np.ndarray, IterTrace]:
    """Iterative denoising and backward projections.

    Alternates ``z = x + A^+(y - A x)`` (projection onto ``{A x = y}``
    for ``eps = 0``) with ``x = D(z; sigma_e + delta)``.  The objective
    trace is left empty; PSNR and step residuals are recorded.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.zeros(op.n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if ground_truth is not None:
        ground_truth = np.asarray(ground_truth, dtype=np.float64)
    level = cfg.level
    trace = IterTrace(iterates=[] if keep_iterates else None, step=1.0)
    for _ in range(cfg.iters):
        z = x + pseudo_inverse_apply(op, y - op.apply(x), cfg.eps)
        x_new = np.asarray(denoiser(z, level), dtype=np.float64)
        if ground_truth is not None:
            trace.psnr.append(_psnr(x_new, ground_truth))
        trace.residual.append(float(np.linalg.norm(x_new - x)))
        if trace.iterates is not None:
            trace.iterates.append(x_new.copy())
        x = x_new
    return x, trace


def equivalence_check(op: LinearOperator, y, denoiser, cfg: IdbpConfig, x0=None) -> float:
    """Largest ``||x_k^IDBP - x_k^ISTA||_inf`` over the iterations.

    ISTA runs on the BP fidelity (same ``eps``) with ``mu = 1``,
    ``beta = (sigma_e + delta)^2`` and the denoiser as prox.
    """
    if cfg.iters == 0:
        return 0.0
    _, t_idbp = idbp(op, y, denoiser, cfg, x0, keep_iterates=True)
    adapter = denoiser if isinstance(denoiser, DenoiserAdapter) else DenoiserAdapter(denoiser)
    fid = FidelityTerm(BP, op, y, eps=cfg.eps)
    step = ProxStepConfig(beta=cfg.beta, iters=cfg.iters, step=1.0, record_trace=False, keep_iterates=True)
    _, t_ista = prox_gradient(fid, adapter.prox, step, x0)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(t_idbp.iterates, t_ista.iterates))
