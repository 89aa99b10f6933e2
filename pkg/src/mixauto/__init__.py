"""Profit-maximizing pricing and fleet composition for ride-hailing with
human-driven and autonomous vehicles."""
from .dynamics import FleetState, RelocationPolicy, induced_policy, iterate_to_fixed_point, step
from .equilibrium import RecoveryFailed, SolveFailed, SolveReport, recover_original, solve_equilibrium
from .model import (
    Assignment,
    DemandPattern,
    DeploymentMode,
    EconomicParams,
    EquilibriumSolution,
    ModelError,
    Regime,
    Scenario,
    load_scenario,
    validate_demand_pattern,
)
from .problems import build_alternative
from .qp import QpProblem, QpResult, QpSettings, Status, solve_qp
from .star import StarCompleteSpec, build_star_to_complete, classify_regime, compute_thresholds
from .verify import (
    certify_kkt,
    compute_compensations,
    compute_expected_earnings,
    verify_original_feasibility,
)

__all__ = [
    "Assignment", "DemandPattern", "DeploymentMode", "EconomicParams", "EquilibriumSolution",
    "FleetState", "ModelError", "QpProblem", "QpResult", "QpSettings", "RecoveryFailed", "Regime",
    "RelocationPolicy", "Scenario", "SolveFailed", "SolveReport", "StarCompleteSpec", "Status",
    "build_alternative", "build_star_to_complete", "certify_kkt", "classify_regime",
    "compute_compensations", "compute_expected_earnings", "compute_thresholds", "induced_policy",
    "iterate_to_fixed_point", "load_scenario", "recover_original", "solve_equilibrium", "solve_qp",
    "step", "validate_demand_pattern", "verify_original_feasibility",
]
