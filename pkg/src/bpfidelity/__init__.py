"""Least-squares vs back-projection fidelity for linear inverse problems."""
from .errors import (
    BPFidelityError,
    ConvergenceError,
    DimensionError,
    NumericalError,
    ShapeError,
    UnsupportedScale,
)
from .fidelity import FidelityTerm
from .harness import ExperimentSpec, SweepResult, add_noise, build_scenario, psnr, run_sweep
from .imaging import bicubic_upsample, phantom, read_pgm, write_pgm
from .kernels import BACKEND
from .linops import (
    CirculantConv2D,
    Composite,
    DenseMatrix,
    Downsample2D,
    GaussianMeasurement,
    HaarBasis2D,
    Identity,
    InpaintMask,
    LinearOperator,
    SpectralDecomposition,
    pseudo_inverse_apply,
    spectrum,
)
from .priors import DenoiserAdapter, L2Prior, TvConfig, TVPrior, as_prox, tv_prox, tv_value
from .solvers import IdbpConfig, ProxStepConfig, conjugate_gradient, equivalence_check, idbp, prox_gradient
from .tikhonov import (
    ClosedFormSolver,
    MseBreakdown,
    NoiseSpec,
    SubspaceConstraint,
    check_observations,
    gamma_from_prior,
    mse_bp_analytic,
    mse_ls_analytic,
    solve_bp_closed,
    solve_ls_closed,
    subspace_mse,
)

__version__ = "0.1.0"
