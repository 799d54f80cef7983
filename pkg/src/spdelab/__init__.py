"""Numerical laboratory for blowup and global existence in stochastically
forced reaction-diffusion equations with Dirichlet boundary."""

__version__ = "0.1.0"

from .blowup import (
    BlowupOutcome,
    BlowupThreshold,
    Dichotomy,
    ModelParams,
    OutcomeStatus,
    PowerLaw,
    ProbabilityEstimate,
    TabulatedNonlinearity,
    analytic_blowup_bound,
    deterministic_dichotomy,
    lower_solution,
    lower_solution_series,
    mc_blowup_probability,
    tau_from_path,
)
from .certificates import (
    CertificateKind,
    CertificateReport,
    Verdict,
    admissible_initial,
    certificate_heat_kernel,
    certificate_integral,
    certificate_saturation,
)
from .config import RunConfig, load_config
from .domain import (
    DiscreteOperator,
    DomainSpec,
    EigenData,
    GridSpec,
    HeatKernelBoundReport,
    apply_heat_semigroup,
    build_grid,
    build_laplacian,
    heat_kernel_ratio_report,
    richardson_extrapolate,
    solve_eigenpairs,
    sup_norm_decay,
    weighted_inner,
)
from .errors import (
    BlownUp,
    ConfigurationError,
    NumericalFailure,
    PreconditionFailure,
    SpdeLabError,
)
from .integrator import (
    Outcome,
    Scheme,
    SchemeConfig,
    TrajectoryResult,
    mild_residual,
    reconstruct_u,
    simulate_rpde,
    simulate_spde_em,
    step_rpde,
    weak_form_residual,
)
from .stochastic import (
    BrownianPath,
    DerivedParams,
    blowup_density,
    brownian_increments,
    derive_params,
    exp_functional,
    gamma_lower,
    gamma_tail,
    sample_brownian,
)

__all__ = [
    "__version__",
    # domain
    "DomainSpec", "GridSpec", "DiscreteOperator", "EigenData", "HeatKernelBoundReport",
    "build_grid", "build_laplacian", "solve_eigenpairs", "weighted_inner",
    "richardson_extrapolate", "apply_heat_semigroup", "sup_norm_decay",
    "heat_kernel_ratio_report",
    # stochastic
    "BrownianPath", "DerivedParams", "brownian_increments", "sample_brownian",
    "derive_params", "exp_functional", "gamma_tail", "gamma_lower", "blowup_density",
    # blowup
    "ModelParams", "PowerLaw", "TabulatedNonlinearity", "BlowupThreshold",
    "BlowupOutcome", "OutcomeStatus", "Dichotomy", "ProbabilityEstimate",
    "lower_solution", "lower_solution_series", "tau_from_path",
    "analytic_blowup_bound", "deterministic_dichotomy", "mc_blowup_probability",
    # certificates
    "CertificateKind", "CertificateReport", "Verdict", "admissible_initial",
    "certificate_integral", "certificate_saturation", "certificate_heat_kernel",
    # integrator
    "Scheme", "SchemeConfig", "Outcome", "TrajectoryResult", "step_rpde",
    "simulate_rpde", "simulate_spde_em", "reconstruct_u",
    "weak_form_residual", "mild_residual",
    # config
    "RunConfig", "load_config",
    # errors
    "SpdeLabError", "ConfigurationError", "NumericalFailure", "PreconditionFailure",
    "BlownUp",
]
