"""Discrete-velocity solver and verification tools for the fermionic quantum BGK model."""

from .errors import (
    AdmissibilityError,
    ConfigError,
    ConvergenceError,
    DegenerateMomentsError,
    DomainError,
    FermiBGKError,
    InvariantViolationError,
    OutOfBranchError,
    PositivityError,
    SingularFrequencyError,
    UsageError,
)
from .fdintegrals import beta, beta_branch, beta_inverse, beta_prime, fd_integral
from .equilibrium import (
    FermiParams,
    Moments,
    TauCoefficients,
    discrete_invert_equilibrium,
    equilibrium_moments,
    fermi_dirac_eval,
    invert_equilibrium,
    moments_B,
    relaxation_frequency,
)
from .phasegrid import (
    GlobalEquilibrium,
    PerturbationSpec,
    PhaseState,
    SpatialGrid,
    VelocityGrid,
    compute_moments,
    h_functional,
    init_perturbed_state,
)

__version__ = "0.1.0"

__all__ = [
    "beta",
    "beta_branch",
    "beta_inverse",
    "beta_prime",
    "fd_integral",
    "AdmissibilityError",
    "ConfigError",
    "ConvergenceError",
    "DegenerateMomentsError",
    "DomainError",
    "FermiBGKError",
    "InvariantViolationError",
    "OutOfBranchError",
    "PositivityError",
    "SingularFrequencyError",
    "UsageError",
    "FermiParams",
    "Moments",
    "TauCoefficients",
    "discrete_invert_equilibrium",
    "equilibrium_moments",
    "fermi_dirac_eval",
    "invert_equilibrium",
    "moments_B",
    "relaxation_frequency",
    "GlobalEquilibrium",
    "PerturbationSpec",
    "PhaseState",
    "SpatialGrid",
    "VelocityGrid",
    "compute_moments",
    "h_functional",
    "init_perturbed_state",
    "__version__",
]
