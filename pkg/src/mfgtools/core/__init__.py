from .types import (
    CONTINUOUS,
    DEFAULT_SIMPLEX_TOL,
    DISCRETE,
    NEGATIVE_MASS_CLAMP,
    Horizon,
    MeanFieldTrajectory,
    PayoffSpec,
    PolicyTrajectory,
    ScenarioModel,
    SimplexVector,
    StateSpace,
    TransitionKernelSpec,
    clamp_profile,
)
from .ops import (
    EquilibriumReport,
    check_kernel_rows,
    check_population_equilibrium,
    policy_averaged_kernel,
    probe_scenario,
    random_profiles,
    reduce_pairwise_payoff,
    scenario_population_kernel,
)
from .scenarios import (
    bundled,
    bundled_names,
    bundled_path,
    parse_scenario,
    resolve_scenario,
    validate_scenario,
)

__all__ = [
    "CONTINUOUS",
    "DEFAULT_SIMPLEX_TOL",
    "DISCRETE",
    "NEGATIVE_MASS_CLAMP",
    "Horizon",
    "MeanFieldTrajectory",
    "PayoffSpec",
    "PolicyTrajectory",
    "ScenarioModel",
    "SimplexVector",
    "StateSpace",
    "TransitionKernelSpec",
    "clamp_profile",
    "EquilibriumReport",
    "check_kernel_rows",
    "check_population_equilibrium",
    "policy_averaged_kernel",
    "probe_scenario",
    "random_profiles",
    "reduce_pairwise_payoff",
    "scenario_population_kernel",
    "bundled",
    "bundled_names",
    "bundled_path",
    "parse_scenario",
    "resolve_scenario",
    "validate_scenario",
]
