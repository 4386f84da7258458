"""Scenarios, noise, metrics and beta sweeps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BPFidelityError, DimensionError
from .fidelity import FidelityTerm
from .imaging import bicubic_upsample, load_image
from .linops import (
    MAX_DENSE_N,
    CirculantConv2D,
    Composite,
    Downsample2D,
    GaussianMeasurement,
    HaarBasis2D,
    InpaintMask,
    LinearOperator,
    gaussian_kernel,
    spectrum,
    uniform_kernel,
)
from .priors import L2Prior, TVPrior, make_denoiser
from .solvers import IdbpConfig, ProxStepConfig, conjugate_gradient, idbp, prox_gradient
from .tikhonov import (
    ClosedFormSolver,
    NoiseSpec,
    gamma_from_prior,
    mse_bp_analytic,
    mse_ls_analytic,
)

log = logging.getLogger(__name__)

SCENARIOS = ("srx3", "deblur9", "cs", "inpaint")
SOLVERS = ("closed", "ista", "fista", "idbp", "cg")
SR_FACTOR = 3
CSV_HEADER = (
    "scenario", "fidelity", "prior", "beta", "eps", "sigma_e", "seed",
    "psnr_db", "mse", "bias_sq", "variance", "iters", "wall_ms",
)
DEFAULT_DRAWS = 5


# -- metrics -----------------------------------------------------------------


def psnr(estimate, ground_truth) -> float:
    """``10 log10(255^2 / mean squared error)``; ``inf`` for identical inputs."""
    estimate = np.asarray(estimate, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if estimate.shape != ground_truth.shape:
        raise DimensionError(f"shape mismatch {estimate.shape} vs {ground_truth.shape}")
    return psnr_from_mse(float(np.mean((estimate - ground_truth) ** 2)))


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return math.inf
    return 10 * math.log10(255.0**2 / mse)


def add_noise(y_clean, noise: NoiseSpec, seed) -> np.ndarray:
    """``y_clean + e`` with i.i.d. Gaussian ``e``; the draw depends only on ``seed``."""
    y_clean = np.asarray(y_clean, dtype=np.float64)
    sigma = noise.sigma_for(y_clean)
    if sigma == 0:
        return y_clean.copy()
    return y_clean + sigma * np.random.default_rng(seed).standard_normal(y_clean.shape)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one sweep.

    ``prior`` is ``l2`` (D = I), ``l2fd`` (loaded finite differences),
    ``l2sfd`` (finite differences on every 8th pixel), ``tv`` or
    ``denoiser:NAME``.  ``eps=None`` means 0.01 sigma_e^2 for deblurring
    with BP and 0 otherwise; ``eps_grid`` sweeps several values instead.
    ``iters=None`` uses 100 for TV (500 for CS), 200 for denoisers and 500
    for CG.
    """

    scenario: str = "srx3"
    size: int = 64
    image: str | None = None
    mratio: float = 0.5
    noise: NoiseSpec = NoiseSpec(sigma_e=0.0)
    fidelity: str = "bp"
    eps: float | None = None
    eps_grid: tuple = ()
    prior: str = "l2"
    betas: tuple = (1.0,)
    solver: str = "closed"
    iters: int | None = None
    draws: int = DEFAULT_DRAWS
    seed: int = 0
    delta: float | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.fidelity not in ("ls", "bp"):
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        if not self.betas or any(not b > 0 for b in self.betas):
            raise ValueError("beta grid must be non-empty and strictly positive")
        if self.size < 2 * SR_FACTOR:
            raise ValueError("image size too small")
        if not 0 < self.mratio <= 1:
            raise ValueError("mratio must lie in (0, 1]")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.fidelity == "ls" and (self.eps or any(self.eps_grid)):
            raise ValueError("eps only applies to BP")
        l2 = self.prior.startswith("l2")
        if self.solver in ("closed", "cg") and not l2:
            raise ValueError(f"solver {self.solver} needs an l2 prior")
        if self.solver == "idbp" and (self.fidelity != "bp" or not self.prior.startswith("denoiser:")):
            raise ValueError("idbp needs --fidelity bp and a denoiser prior")
        if self.prior not in ("l2", "l2fd", "l2sfd", "tv") and not self.prior.startswith("denoiser:"):
            raise ValueError(f"unknown prior {self.prior!r}")

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    @property
    def noisy(self) -> bool:
        return self.noise.snr_db is not None or self.noise.sigma_e > 0

    @property
    def n_draws(self) -> int:
        return self.draws if self.noisy else 1

    def resolved_iters(self) -> int:
        if self.iters is not None:
            return self.iters
        if self.solver == "cg":
            return 500
        if self.prior.startswith("denoiser:"):
            return 200
        return 500 if self.scenario == "cs" else 100

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class Scenario(NamedTuple):
    """Operator, solver initialization and ground truth, plus the data used."""

    op: LinearOperator
    init: np.ndarray
    ground_truth: np.ndarray
    y: np.ndarray
    sigma_e: float


def build_operator(spec: ExperimentSpec) -> LinearOperator:
    shape = spec.image_shape
    n = shape[0] * shape[1]
    if spec.scenario == "srx3":
        return Composite(Downsample2D(SR_FACTOR, shape), CirculantConv2D(gaussian_kernel(7, 1.6), shape))
    if spec.scenario == "deblur9":
        return CirculantConv2D(uniform_kernel(9), shape)
    m = max(1, int(round(spec.mratio * n)))
    if spec.scenario == "cs":
        return Composite(GaussianMeasurement(m, n, seed=spec.seed, in_shape=shape), HaarBasis2D(shape))
    rng = np.random.default_rng(spec.seed)
    kept = np.sort(rng.choice(n, size=m, replace=False))
    return InpaintMask(kept, n, in_shape=shape)


def initial_guess(spec: ExperimentSpec, op: LinearOperator, y) -> np.ndarray:
    """Bicubic upsampling for SR, ``y`` for deblurring, ``A^T y`` for inpainting, zero for CS."""
    if spec.scenario == "srx3":
        lo = Downsample2D(SR_FACTOR, spec.image_shape).out_shape
        return bicubic_upsample(y.reshape(lo), SR_FACTOR, spec.image_shape).ravel()
    if spec.scenario == "deblur9":
        return np.array(y, copy=True)
    if spec.scenario == "inpaint":
        return op.adjoint(y)
    return np.zeros(op.n)


def draw_seed(spec: ExperimentSpec, draw: int) -> int:
    """Noise seed of one realization; shared by every beta so cells are comparable."""
    return int(np.random.SeedSequence([spec.seed, draw]).generate_state(1)[0])


def build_scenario(spec: ExperimentSpec, draw: int = 0, op: LinearOperator | None = None) -> Scenario:
    x = load_image(spec.image, spec.size).ravel()
    op = build_operator(spec) if op is None else op
    y_clean = op.apply(x)
    sigma = spec.noise.sigma_for(y_clean)
    y = add_noise(y_clean, spec.noise, draw_seed(spec, draw))
    return Scenario(op, initial_guess(spec, op, y), x, y, sigma)


def make_prior(spec: ExperimentSpec):
    if spec.prior == "l2":
        return L2Prior.identity()
    if spec.prior == "l2fd":
        return L2Prior.finite_difference(spec.image_shape)
    if spec.prior == "l2sfd":
        return L2Prior.sparse_finite_difference(spec.image_shape)
    if spec.prior == "tv":
        return TVPrior(spec.image_shape)
    return make_denoiser(spec.prior.split(":", 1)[1], spec.image_shape)


def resolve_eps_grid(spec: ExperimentSpec, sigma_e: float) -> tuple:
    if spec.fidelity == "ls":
        return (0.0,)
    if spec.eps_grid:
        return spec.eps_grid
    if spec.eps is not None:
        return (float(spec.eps),)
    return (0.01 * sigma_e**2,) if spec.scenario == "deblur9" else (0.0,)


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepRow:
    scenario: str
    fidelity: str
    prior: str
    beta: float
    eps: float
    sigma_e: float
    seed: int
    psnr_db: float | None
    mse: float | None
    bias_sq: float | None = None
    variance: float | None = None
    iters: int | None = None
    wall_ms: float | None = None
    error: str | None = None

    def as_csv(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [fmt(getattr(self, k)) for k in CSV_HEADER]


@dataclass
class SweepResult:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)
    baseline_psnr: float | None = None

    @property
    def provenance(self) -> dict:
        return {"spec_hash": self.spec.digest(), "seed": self.spec.seed}

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.as_csv())
        return buf.getvalue() if fh is None else ""

    def mean_psnr(self) -> dict:
        """Average PSNR over noise draws, keyed by ``(beta, eps)``; failed cells skipped."""
        acc: dict = {}
        for r in self.rows:
            if r.psnr_db is not None:
                acc.setdefault((r.beta, r.eps), []).append(r.psnr_db)
        return {k: float(np.mean(v)) for k, v in acc.items()}

    def best(self) -> tuple[tuple, float]:
        """``((beta, eps), mean PSNR)`` of the best cell."""
        means = self.mean_psnr()
        if not means:
            raise BPFidelityError("no successful cells in sweep")
        key = max(means, key=means.get)
        return key, means[key]

    @property
    def errors(self) -> list:
        return [r for r in self.rows if r.error is not None]


def read_csv(fh) -> list[dict]:
    """Parse sweep CSV text back into dicts of floats (empty fields become None)."""
    out = []
    for rec in csv.DictReader(fh):
        row = {}
        for k, v in rec.items():
            if k in ("scenario", "fidelity", "prior"):
                row[k] = v
            elif v == "":
                row[k] = None
            elif k in ("seed", "iters"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out


class _Context:
    """Data shared read-only by all cells of one sweep."""

    def __init__(self, spec: ExperimentSpec, analytic: bool):
        self.spec = spec
        self.op = build_operator(spec)
        self.draws = [build_scenario(spec, d, self.op) for d in range(spec.n_draws)]
        self.truth = self.draws[0].ground_truth
        self.sigma = self.draws[0].sigma_e
        self.prior = make_prior(spec)
        self.serial_lock = None
        if not getattr(self.prior, "thread_safe", True):
            self.serial_lock = threading.Lock()
        self.spec_dec = None
        self.gamma = None
        if analytic and spec.solver == "closed":
            try:
                self.spec_dec = spectrum(self.op)
                self.gamma = gamma_from_prior(self.prior, self.spec_dec)
                self.coeffs = self.spec_dec.coefficients_sq(self.truth)
            except BPFidelityError as exc:
                log.warning("analytic MSE unavailable: %s", exc)
                self.spec_dec = None


def _solve_cell(ctx: _Context, beta: float, eps: float) -> list[tuple[np.ndarray, int]]:
    spec = ctx.spec
    op = ctx.op
    if spec.solver == "closed":
        solver = ClosedFormSolver(spec.fidelity, op, beta, ctx.prior, eps=eps)
        Y = np.stack([s.y for s in ctx.draws], axis=1)
        X = solver.solve(Y)
        return [(X[:, i], 0) for i in range(X.shape[1])]
    out = []
    iters = spec.resolved_iters()
    for sc in ctx.draws:
        if spec.solver == "cg":
            solver = ClosedFormSolver(spec.fidelity, op, beta, ctx.prior, eps=eps, method="cg")
            res = conjugate_gradient(solver._normal_apply, solver.rhs(sc.y), iters=iters, tol=1e-10)
            out.append((res.x, len(res.residuals) - 1))
        elif spec.solver == "idbp":
            level = math.sqrt(beta)
            cfg = IdbpConfig(sigma_e=min(sc.sigma_e, level), delta=max(level - sc.sigma_e, 0.0),
                             iters=iters, eps=eps)
            x, _ = idbp(op, sc.y, ctx.prior, cfg, sc.init)
            out.append((x, iters))
        else:
            fid = FidelityTerm(spec.fidelity, op, sc.y, eps=eps)
            cfg = ProxStepConfig(beta=beta, iters=iters, momentum="nesterov" if spec.solver == "fista" else None,
                                 record_trace=False)
            x, _ = prox_gradient(fid, ctx.prior, cfg, sc.init)
            out.append((x, iters))
    return out


def _run_cell(ctx: _Context, beta: float, eps: float, timing: bool) -> list[SweepRow]:
    spec = ctx.spec
    n = ctx.op.n
    base = dict(scenario=spec.scenario, fidelity=spec.fidelity, prior=spec.prior, beta=beta, eps=eps,
                sigma_e=ctx.sigma)
    seeds = [draw_seed(spec, d) if spec.noisy else spec.seed for d in range(len(ctx.draws))]
    t0 = time.perf_counter()
    try:
        if ctx.serial_lock is not None:
            with ctx.serial_lock:
                results = _solve_cell(ctx, beta, eps)
        else:
            results = _solve_cell(ctx, beta, eps)
    except (BPFidelityError, ArithmeticError, ValueError) as exc:
        log.error("cell beta=%g eps=%g failed: %s", beta, eps, exc)
        return [SweepRow(**base, seed=s, psnr_db=None, mse=None, error=str(exc)) for s in seeds]
    wall = (time.perf_counter() - t0) * 1000 / len(results) if timing else None

    bias = var = None
    if ctx.spec_dec is not None:
        if spec.fidelity == "ls":
            br = mse_ls_analytic(ctx.spec_dec, ctx.truth, ctx.gamma.gamma_sq, beta, ctx.sigma, coeffs_sq=ctx.coeffs)
        else:
            br = mse_bp_analytic(ctx.spec_dec, ctx.truth, ctx.gamma.gamma_sq, beta, ctx.sigma, eps=eps,
                                 coeffs_sq=ctx.coeffs)
        bias, var = br.bias_sq / n, br.variance / n
    rows = []
    for seed, (x, iters) in zip(seeds, results):
        mse = float(np.mean((x - ctx.truth) ** 2))
        rows.append(SweepRow(**base, seed=seed, psnr_db=psnr_from_mse(mse), mse=mse, bias_sq=bias,
                             variance=var, iters=iters, wall_ms=wall))
    return rows


def run_sweep(spec: ExperimentSpec, workers: int = 1, timing: bool = False, analytic: bool = True) -> SweepResult:
    """Evaluate every ``(beta, eps)`` cell of ``spec``.

    Rows come out in ``(beta, eps, draw)`` order regardless of ``workers``.
    For l2 priors solved in closed form the analytic bias and variance
    (per pixel, evaluated at the ground truth) accompany the empirical
    numbers when the spectrum is available (circulant or ``n <= 8192``).
    A failing cell yields rows with an ``error`` message instead of
    aborting the sweep.  ``wall_ms`` is only filled when ``timing`` is set
    so that identical specs give identical bytes.
    """
    analytic = analytic and spec.prior.startswith("l2")
    ctx = _Context(spec, analytic and (spec.scenario == "deblur9" or spec.size**2 <= MAX_DENSE_N))
    cells = [(b, e) for b in spec.betas for e in resolve_eps_grid(spec, ctx.sigma)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda c: _run_cell(ctx, c[0], c[1], timing), cells))
    else:
        chunks = [_run_cell(ctx, b, e, timing) for b, e in cells]
    result = SweepResult(spec, [r for chunk in chunks for r in chunk])
    if spec.scenario == "srx3":
        result.baseline_psnr = float(np.mean([psnr(s.init, s.ground_truth) for s in ctx.draws]))
    return result


# -- Monte Carlo -----------------------------------------------------------------


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    draws: int


def monte_carlo_mse(solver: ClosedFormSolver, x, sigma_e: float, draws: int = 100, seed: int = 0,
                    batch: int = 50) -> MonteCarloEstimate:
    """Empirical ``E||x_hat - x||^2`` of a closed-form estimator over noise draws."""
    x = np.asarray(x, dtype=np.float64)
    y_clean = solver.op.apply(x)
    rng = np.random.default_rng(seed)
    errs = []
    for start in range(0, draws, batch):
        k = min(batch, draws - start)
        Y = y_clean[:, None] + sigma_e * rng.standard_normal((y_clean.size, k))
        X = solver.solve(Y)
        errs.append(np.sum((X - x[:, None]) ** 2, axis=0))
    e = np.concatenate(errs)
    se = float(e.std(ddof=1) / math.sqrt(draws)) if draws > 1 else math.nan
    return MonteCarloEstimate(float(e.mean()), se, draws)
