"""kslab: a numerical laboratory for exact effective-potential construction.

Given an interacting few-body quantum system on a 1D grid, the package
computes the time-Taylor coefficients of its one-particle density, solves
the order-by-order weighted Sturm-Liouville problems that define the unique
effective potential of an auxiliary (for instance noninteracting, Kohn-Sham)
system reproducing that density, checks the unique-solvability estimates
numerically, and verifies the construction by propagating the auxiliary
system and measuring how fast the density mismatch vanishes at short times.
"""

__version__ = "0.1.0"

from .grid import (
    DENSITY_FLOOR,
    Grid,
    ScalarField,
    TaylorField,
    build_grid,
    divergence,
    gradient,
    softcore,
    weighted_divgrad_matrix,
)
from .quantum import (
    ManyBodySystem,
    QuantumState,
    Trajectory,
    build_system,
    construct_ks_initial_state,
    current_divergence,
    density,
    ground_state,
    hamiltonian,
    observable_taylor,
    propagate,
    q_expectation_taylor,
)
from .sturm import SLDiagnostics, SLProblem, check_lax_milgram, estimate_poincare, solve_sl
from .taylor import InversionResult, delta_potential_taylor, invert_potential_taylor, predict_density_taylor
from .verify import (
    ExperimentReport,
    conservation_checks,
    interaction_independence_experiment,
    roundtrip_experiment,
    timestep_inversion_oracle,
)

__all__ = [
    "DENSITY_FLOOR",
    "Grid",
    "ScalarField",
    "TaylorField",
    "build_grid",
    "divergence",
    "gradient",
    "softcore",
    "weighted_divgrad_matrix",
    "ManyBodySystem",
    "QuantumState",
    "Trajectory",
    "build_system",
    "construct_ks_initial_state",
    "current_divergence",
    "density",
    "ground_state",
    "hamiltonian",
    "observable_taylor",
    "propagate",
    "q_expectation_taylor",
    "SLDiagnostics",
    "SLProblem",
    "check_lax_milgram",
    "estimate_poincare",
    "solve_sl",
    "InversionResult",
    "delta_potential_taylor",
    "invert_potential_taylor",
    "predict_density_taylor",
    "ExperimentReport",
    "conservation_checks",
    "interaction_independence_experiment",
    "roundtrip_experiment",
    "timestep_inversion_oracle",
]
