"""Profit-maximizing equilibria via convex subproblems.

For HV (AV) priority the original problem is solved as the better of its
two homogeneous cases: demand covering the priority fleet everywhere (the
alternative problem plus ``d >= x`` / ``d >= z``, on which it coincides
with the original problem) and the forced single-fleet deployment of the
other kind.  The unrestricted alternative problem is still solved and its
objective reported, since it can exceed or undershoot the original optimum
on general networks.

The weighted assignment has no such decomposition.  Its candidates are the
surrogate optimum and the HV/AV case optima, each given weighted-consistent
relocations; the best one that satisfies the weighted equilibrium is kept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Assignment,
    DemandPattern,
    DeploymentMode,
    EconomicParams,
    EquilibriumSolution,
    ExpectedEarnings,
    Regime,
    price_from_demand,
    profit_of,
)
from .patterns import all_patterns, build_pattern_problem
from .problems import ProblemBuild, build_alternative
from .qp import QpResult, QpSettings, Status, solve_qp
from .verify import (
    FeasibilityReport,
    KktCertificate,
    ZeroDemand,
    certify_kkt,
    compute_compensations,
    compute_expected_earnings,
    earnings_residual,
    verify_original_feasibility,
)

RECOVERY_TOL = 1e-6
SIGN_TOL = 1e-7
REGIME_REL_TOL = 1e-6


class SolveFailed(RuntimeError):
    def __init__(self, status: Status, detail: str = ""):
        super().__init__(f"QP solve ended with status {status.value}{': ' + detail if detail else ''}")
        self.status = status


class RecoveryFailed(RuntimeError):
    def __init__(self, message: str, residuals: dict | None = None):
        self.residuals = dict(residuals or {})
        if self.residuals:
            worst = sorted(self.residuals.items(), key=lambda kv: -kv[1])
            message += " (" + ", ".join(f"{k}={v:.3g}" for k, v in worst) + ")"
        super().__init__(message)


def classify_solution(solution: EquilibriumSolution, pattern: DemandPattern) -> Regime:
    tol = REGIME_REL_TOL * float(np.sum(pattern.theta))
    if np.sum(solution.z) <= tol:
        return Regime.HV_ONLY
    if np.sum(solution.x) <= tol:
        return Regime.AV_ONLY
    return Regime.TRULY_MIXED


def _transport(rows, cols):
    """Nonnegative matrix with given margins (rank one, independent coupling)."""
    total = float(np.sum(cols))
    if total <= 0:
        return np.zeros((rows.size, cols.size))
    return np.outer(rows, cols) / total


def weighted_relocations(d, delta, x, z, pattern: DemandPattern, params: EconomicParams):
    """Relocation matrices making (d, delta, x, z) a weighted-priority equilibrium.

    Row sums are fixed by the idle share at each origin and column sums by
    the balance equations; any nonnegative matrix with those margins works.
    """
    a, beta = pattern.alpha, params.beta
    tot = x + z
    f = np.minimum(1.0, np.divide(d, tot, out=np.zeros_like(d), where=tot > 0))
    y_rows = (1.0 - f) * x
    r_rows = (1.0 - f) * z
    y_cols = (x - delta) / beta - a.T @ (f * x)
    r_cols = z - a.T @ (f * z)
    scale = max(1.0, float(np.max(tot)))
    low = min(float(np.min(y_cols)), float(np.min(r_cols)))
    if low < -SIGN_TOL * scale:
        raise RecoveryFailed("weighted relocation margins are negative",
                             {"relocation-margin": -low})
    return _transport(y_rows, np.maximum(y_cols, 0.0)), _transport(r_rows, np.maximum(r_cols, 0.0))


def _clip(build: ProblemBuild, v):
    return np.clip(np.asarray(v, dtype=float), build.qp.lower, build.qp.upper)


def _blocks(build: ProblemBuild, v):
    n = build.n
    z1, z2 = np.zeros(n), np.zeros((n, n))
    out = {}
    for name in ("d", "delta", "x", "z"):
        b = build.block(v, name)
        out[name] = z1.copy() if b is None else b.copy()
    for name in ("y", "r"):
        b = build.block(v, name)
        out[name] = z2.copy() if b is None else b.copy()
    return out


def _finish(build: ProblemBuild, assignment: Assignment, blk) -> EquilibriumSolution:
    pattern, params = build.pattern, build.params
    d = blk["d"]
    p = np.clip(price_from_demand(d, pattern, params), 0.0, params.pbar)
    c = compute_compensations(d, blk["x"], blk["z"], params, assignment)
    return EquilibriumSolution(p, c, d, blk["delta"], blk["x"], blk["y"], blk["z"], blk["r"],
                               profit_of(d, blk["delta"], blk["z"], pattern, params))


def _priority_map(build: ProblemBuild, blk):
    """Alternative HV/AV-priority variables to original relocations."""
    d = blk["d"]
    scale = max(1.0, float(np.max(build.pattern.theta)))
    tol = SIGN_TOL * scale
    if build.assignment is Assignment.HV_PRIORITY:
        first, moves = blk["x"], blk["r"]
    else:
        first, moves = blk["z"], blk["y"]
    zero = np.zeros_like(moves)
    covered = bool(np.all(d >= first - tol))
    if not covered and not np.all(d <= first + tol):
        gap = min(float(np.max(d - first)), float(np.max(first - d)))
        raise RecoveryFailed("alternative optimum mixes d < x and d > x across locations"
                             if build.assignment is Assignment.HV_PRIORITY else
                             "alternative optimum mixes d < z and d > z across locations",
                             {"sign-pattern": gap})
    if build.assignment is Assignment.HV_PRIORITY:
        # covered: drivers all busy, moves are AV relocations; else they are driver moves
        blk["y"], blk["r"] = (zero, moves) if covered else (moves, zero)
    else:
        blk["y"], blk["r"] = (moves, zero) if covered else (zero, moves)
    return blk


def recover_original(build: ProblemBuild, qp_result: QpResult) -> EquilibriumSolution:
    """Map an optimum of ``build`` to a solution of the original problem."""
    if qp_result.status is not Status.OPTIMAL:
        raise SolveFailed(qp_result.status)
    blk = _blocks(build, _clip(build, qp_result.primal))
    if build.kind == "alternative" and build.mode is DeploymentMode.MIXED:
        if build.assignment is Assignment.WEIGHTED:
            blk["y"], blk["r"] = weighted_relocations(blk["d"], blk["delta"], blk["x"], blk["z"],
                                                      build.pattern, build.params)
        else:
            blk = _priority_map(build, blk)
    sol = _finish(build, build.assignment, blk)
    rep = verify_original_feasibility(sol, build.pattern, build.params, build.assignment)
    if rep.max_violation > RECOVERY_TOL:
        raise RecoveryFailed("recovered point violates the equilibrium equations",
                             rep.violations(RECOVERY_TOL))
    return sol


def as_weighted(solution: EquilibriumSolution, pattern: DemandPattern,
                params: EconomicParams) -> EquilibriumSolution:
    """Re-route idle vehicles so ``solution``'s fleets satisfy the weighted rule."""
    y, r = weighted_relocations(solution.d, solution.delta, solution.x, solution.z,
                                pattern, params)
    c = compute_compensations(solution.d, solution.x, solution.z, params, Assignment.WEIGHTED)
    return solution.replace(y=y, r=r, c=c)


@dataclass(frozen=True)
class Candidate:
    source: str
    status: str
    objective: float | None
    accepted: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {"source": self.source, "status": self.status, "objective": self.objective,
                "accepted": self.accepted, "reason": self.reason}


@dataclass(frozen=True)
class SolveReport:
    assignment: Assignment
    mode: DeploymentMode
    solution: EquilibriumSolution
    kkt: KktCertificate
    equilibrium_residual: float
    earnings_residual: float
    regime: Regime
    source: str
    qp: QpResult
    earnings: ExpectedEarnings
    feasibility: FeasibilityReport
    alternative_objective: float | None = None
    candidates: tuple = field(default_factory=tuple)
    params: EconomicParams | None = None

    @property
    def profit(self) -> float:
        return self.solution.profit

    def to_dict(self) -> dict:
        s = self.solution
        return {
            "profit": s.profit,
            "regime": self.regime.value,
            "p": s.p.tolist(),
            "c": s.c.tolist(),
            "d": s.d.tolist(),
            "delta": s.delta.tolist(),
            "x": s.x.tolist(),
            "z": s.z.tolist(),
            "y": s.y.tolist(),
            "r": s.r.tolist(),
            "equilibrium_residual": self.equilibrium_residual,
            "earnings_residual": self.earnings_residual,
            "kkt_max_violation": self.kkt.max_violation,
            "assignment": self.assignment.value,
            "mode": self.mode.value,
            "source": self.source,
            "alternative_objective": self.alternative_objective,
            "candidates": [c.to_dict() for c in self.candidates],
            "k": self.params.k,
            "s": self.params.s,
        }


def build_for_source(source: str, pattern: DemandPattern, params: EconomicParams,
                     assignment: Assignment) -> ProblemBuild:
    """The QP named by a report's ``source`` field."""
    if source == "hv-case":
        return build_alternative(pattern, params, Assignment.HV_PRIORITY, restrict_case=True)
    if source == "av-case":
        return build_alternative(pattern, params, Assignment.AV_PRIORITY, restrict_case=True)
    if source == "hv-only":
        return build_alternative(pattern, params, assignment, DeploymentMode.FORCED_HV_ONLY)
    if source == "av-only":
        return build_alternative(pattern, params, assignment, DeploymentMode.FORCED_AV_ONLY)
    if source == "weighted-surrogate":
        return build_alternative(pattern, params, Assignment.WEIGHTED)
    if source.startswith("pattern:"):
        bits = source.split(":", 1)[1]
        if not set(bits) <= {"0", "1"} or len(bits) != pattern.n:
            raise ValueError(f"bad pattern source {source!r}")
        return build_pattern_problem(pattern, params, assignment, [b == "1" for b in bits])
    raise ValueError(f"unknown source {source!r}")


def _source_name(build: ProblemBuild) -> str:
    if build.kind == "pattern":
        return "pattern:" + "".join("1" if b else "0" for b in build.case_pattern)
    if build.mode is DeploymentMode.FORCED_HV_ONLY:
        return "hv-only"
    if build.mode is DeploymentMode.FORCED_AV_ONLY:
        return "av-only"
    if build.assignment is Assignment.WEIGHTED:
        return "weighted-surrogate"
    return "hv-case" if build.assignment is Assignment.HV_PRIORITY else "av-case"


def point_from_solution(build: ProblemBuild, solution: EquilibriumSolution) -> np.ndarray:
    """Inverse of recovery: the QP vector of ``build`` describing ``solution``."""
    s = solution
    moves = s.y + s.r
    blocks = {"d": s.d, "delta": s.delta, "x": s.x, "z": s.z}
    if build.kind == "pattern":
        first = s.x if build.assignment is Assignment.HV_PRIORITY else s.z
        blocks.update(y=s.y, r=s.r, slack=np.abs(s.d - first))
    elif build.mode is DeploymentMode.FORCED_HV_ONLY:
        blocks["y"] = moves
    elif build.mode is DeploymentMode.FORCED_AV_ONLY:
        blocks["r"] = moves
    elif build.assignment is Assignment.WEIGHTED:
        blocks.update(y=s.y, r=s.r)
    elif build.assignment is Assignment.HV_PRIORITY:
        blocks.update(r=moves, slack=s.d - s.x)
    else:
        blocks.update(y=moves, slack=s.d - s.z)
    return build.assemble(**blocks)


def _candidate_builds(pattern, params, assignment, mode, search):
    if mode is not DeploymentMode.MIXED:
        return [build_alternative(pattern, params, assignment, mode)]
    if search == "exhaustive":
        if assignment is Assignment.WEIGHTED:
            raise ValueError("exhaustive search is defined for HV/AV priority only")
        return [build_pattern_problem(pattern, params, assignment, bits)
                for bits in all_patterns(pattern.n)]
    if search != "cases":
        raise ValueError(f"unknown search {search!r}")
    hv_case = build_alternative(pattern, params, Assignment.HV_PRIORITY, restrict_case=True)
    av_case = build_alternative(pattern, params, Assignment.AV_PRIORITY, restrict_case=True)
    hv_only = build_alternative(pattern, params, assignment, DeploymentMode.FORCED_HV_ONLY)
    av_only = build_alternative(pattern, params, assignment, DeploymentMode.FORCED_AV_ONLY)
    if assignment is Assignment.HV_PRIORITY:
        return [hv_case, hv_only]
    if assignment is Assignment.AV_PRIORITY:
        return [av_case, av_only]
    return [build_alternative(pattern, params, Assignment.WEIGHTED),
            hv_case, av_case, hv_only, av_only]


def solve_equilibrium(pattern: DemandPattern, params: EconomicParams,
                      assignment: Assignment,
                      mode: DeploymentMode = DeploymentMode.MIXED,
                      settings: QpSettings = QpSettings(),
                      search: str = "cases") -> SolveReport:
    """Profit-maximizing equilibrium for ``assignment`` under ``mode``.

    ``search="exhaustive"`` enumerates all sign patterns instead of the two
    homogeneous cases (HV/AV priority only, exact, exponential in n).
    """
    alternative_objective = None
    if mode is DeploymentMode.MIXED:
        alt = build_alternative(pattern, params, assignment)
        alt_res = solve_qp(alt.qp, settings)
        if alt_res.status is Status.OPTIMAL:
            alternative_objective = alt_res.objective

    best = None
    log = []
    last_status = None
    for build in _candidate_builds(pattern, params, assignment, mode, search):
        name = _source_name(build)
        res = solve_qp(build.qp, settings)
        last_status = res.status
        if res.status is not Status.OPTIMAL:
            log.append(Candidate(name, res.status.value, None, False, "not solved"))
            continue
        try:
            sol = recover_original(build, res)
            if assignment is not build.assignment and mode is DeploymentMode.MIXED:
                sol = as_weighted(sol, pattern, params)
            rep = verify_original_feasibility(sol, pattern, params, assignment)
            if rep.max_violation > RECOVERY_TOL:
                raise RecoveryFailed("candidate is not a weighted-priority equilibrium",
                                     rep.violations(RECOVERY_TOL))
        except (RecoveryFailed, ZeroDemand) as exc:
            log.append(Candidate(name, res.status.value, res.objective, False, str(exc)))
            continue
        log.append(Candidate(name, res.status.value, res.objective, True))
        key = (sol.profit, -float(np.sum(sol.z)))
        if best is None or _better(key, best[0]):
            best = (key, build, res, sol, rep)

    if best is None:
        if last_status is not None and last_status is not Status.OPTIMAL and \
                all(not c.accepted and c.objective is None for c in log):
            raise SolveFailed(last_status)
        raise RecoveryFailed("no candidate recovered to an equilibrium: " +
                             "; ".join(f"{c.source}: {c.reason}" for c in log))

    _, build, res, sol, rep = best
    earnings = compute_expected_earnings(sol, pattern, params, assignment)
    return SolveReport(
        assignment=assignment,
        mode=mode,
        solution=sol,
        kkt=certify_kkt(build, res),
        equilibrium_residual=rep.max_violation,
        earnings_residual=earnings_residual(sol, earnings, params),
        regime=classify_solution(sol, pattern),
        source=_source_name(build),
        qp=res,
        earnings=earnings,
        feasibility=rep,
        alternative_objective=alternative_objective,
        candidates=tuple(log),
        params=params,
    )


def _better(key, incumbent) -> bool:
    """Higher profit wins; near-ties go to the smaller AV fleet."""
    tie = 1e-9 * (1.0 + abs(incumbent[0]))
    if key[0] > incumbent[0] + tie:
        return True
    if key[0] < incumbent[0] - tie:
        return False
    return key[1] > incumbent[1] + 1e-12 * (1.0 + abs(incumbent[1]))


def solve_all_modes(pattern, params, assignment, settings=QpSettings()):
    """Reports for mixed, forced HV-only and forced AV-only deployment."""
    return {mode: solve_equilibrium(pattern, params, assignment, mode, settings)
            for mode in DeploymentMode}


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), math.ulp(1.0))
