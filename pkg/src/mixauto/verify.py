"""Literal equilibrium checks, compensations, earnings and KKT certificates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import (
    NONNEG_TOL,
    Assignment,
    DemandPattern,
    EconomicParams,
    EquilibriumSolution,
    ExpectedEarnings,
)
from .problems import ProblemBuild, condition_labels
from .qp import QpResult

ZERO_DEMAND_TOL = 1e-12
NO_DRIVER_TOL = 1e-9
ACTIVE_TOL = 1e-9


class VerificationError(RuntimeError):
    pass


class ZeroDemand(VerificationError):
    def __init__(self, i: int, value: float):
        super().__init__(f"demand d[{i}] = {value!r} is too small to set a compensation")
        self.i = i


class NonConvergence(VerificationError):
    pass


class MissingDuals(VerificationError):
    pass


@dataclass(frozen=True)
class FeasibilityReport:
    max_violation: float
    per_constraint: dict

    @property
    def worst(self) -> str:
        return max(self.per_constraint, key=self.per_constraint.get)

    def violations(self, tol: float) -> list[tuple[str, float]]:
        bad = [(k, v) for k, v in self.per_constraint.items() if v > tol]
        return sorted(bad, key=lambda kv: -kv[1])


@dataclass(frozen=True)
class KktCertificate:
    lam: np.ndarray | None
    mu: np.ndarray | None
    gamma: np.ndarray | None
    max_violation: float
    per_condition: list

    def condition(self, cid: str) -> float:
        for name, val in self.per_condition:
            if name == cid:
                return val
        raise KeyError(cid)

    @property
    def ids(self) -> list[str]:
        return [name for name, _ in self.per_condition]


def _inf(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _ratio(num, den):
    """num / den with 0/0 := 0."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def served_split(d, x, z, assignment: Assignment):
    """Rides served by HVs and by AVs at each location."""
    d, x, z = (np.asarray(v, dtype=float) for v in (d, x, z))
    if assignment is Assignment.HV_PRIORITY:
        h = np.minimum(x, d)
        a = np.minimum(z, np.maximum(d - x, 0.0))
    elif assignment is Assignment.AV_PRIORITY:
        a = np.minimum(z, d)
        h = np.minimum(x, np.maximum(d - z, 0.0))
    else:
        f = np.minimum(1.0, _ratio(d, x + z))
        h, a = f * x, f * z
    return h, a


def verify_original_feasibility(solution: EquilibriumSolution, pattern: DemandPattern,
                                params: EconomicParams,
                                assignment: Assignment) -> FeasibilityReport:
    """Residuals of the assignment's equilibrium equations, evaluated as written.

    Demand is recomputed from the prices.  ``capacity`` flags riders who
    accept the price but find no vehicle; the profit formula assumes none.
    """
    s = solution
    a, beta, theta = pattern.alpha, params.beta, pattern.theta
    d = theta * (1.0 - s.p / params.pbar)
    x, z, y, r, delta = s.x, s.z, s.y, s.r, s.delta
    h, av = served_split(d, x, z, assignment)
    if assignment is Assignment.HV_PRIORITY:
        y_need = np.maximum(x - d, 0.0)
        r_need = np.maximum(z - np.maximum(d - x, 0.0), 0.0)
    elif assignment is Assignment.AV_PRIORITY:
        y_need = np.maximum(x - np.maximum(d - z, 0.0), 0.0)
        r_need = np.maximum(z - d, 0.0)
    else:
        idle = np.maximum(1.0 - _ratio(d, x + z), 0.0)
        y_need, r_need = idle * x, idle * z
    fields = [s.p, s.c, s.d, delta, x, z, y.ravel(), r.ravel()]
    per = {
        "x-balance": _inf(x - (beta * (a.T @ h + y.sum(axis=0)) + delta)),
        "y-sum": _inf(y.sum(axis=1) - y_need),
        "z-balance": _inf(z - (a.T @ av + r.sum(axis=0))),
        "r-sum": _inf(r.sum(axis=1) - r_need),
        "capacity": float(np.max(np.maximum(d - x - z, 0.0))),
        "nonnegativity": max(0.0, -min(float(np.min(f)) for f in fields)),
        "demand-price": max(_inf(s.d - d),
                            float(np.max(np.maximum(np.maximum(-s.p, s.p - params.pbar), 0.0)))),
    }
    return FeasibilityReport(max(per.values()), per)


def compute_compensations(d, x, z, params: EconomicParams, assignment: Assignment) -> np.ndarray:
    """Per-ride compensations that make every serving driver earn omega."""
    d, x, z = (np.asarray(v, dtype=float) for v in (d, x, z))
    base = params.driver_cost
    c = np.full(d.shape, base)
    for i in range(d.size):
        if x[i] <= NO_DRIVER_TOL:
            continue  # nobody is paid here
        if d[i] <= ZERO_DEMAND_TOL:
            raise ZeroDemand(i, d[i])
        if assignment is Assignment.HV_PRIORITY:
            if d[i] < x[i]:
                c[i] = x[i] / d[i] * base
        elif assignment is Assignment.AV_PRIORITY:
            if d[i] > z[i]:
                c[i] = x[i] / (d[i] - z[i]) * base
        else:
            c[i] = base * (x[i] + z[i]) / d[i]
    return c


def serve_fraction(d, x, z, assignment: Assignment) -> np.ndarray:
    d, x, z = (np.asarray(v, dtype=float) for v in (d, x, z))
    if assignment is Assignment.HV_PRIORITY:
        num, den = d, x
    elif assignment is Assignment.AV_PRIORITY:
        num, den = np.maximum(d - z, 0.0), x
    else:
        num, den = d, x + z
    f = np.minimum(_ratio(num, den), 1.0)
    return np.where(x <= NO_DRIVER_TOL, 1.0, f)


def compute_expected_earnings(solution: EquilibriumSolution, pattern: DemandPattern,
                              params: EconomicParams, assignment: Assignment,
                              tol: float = 1e-12) -> ExpectedEarnings:
    """Fixed point of the drivers' lifetime-earnings recursion."""
    beta = params.beta
    d = pattern.theta * (1.0 - solution.p / params.pbar)
    f = serve_fraction(d, solution.x, solution.z, assignment)
    c = solution.c
    a = pattern.alpha
    cap = math.ceil(math.log(tol / params.omega) / math.log(beta)) + 1000 if tol < params.omega else 1000
    v = np.zeros(pattern.n)
    for _ in range(max(cap, 1000)):
        nxt = f * (c + beta * (a @ v)) + (1.0 - f) * beta * np.max(v)
        if _inf(nxt - v) < tol:
            return ExpectedEarnings(nxt)
        v = nxt
    raise NonConvergence(f"earnings iteration did not settle in {cap} steps")


def driver_inflow(solution: EquilibriumSolution) -> np.ndarray:
    """delta_i + sum_j y_ji: drivers choosing to be at i."""
    return solution.delta + solution.y.sum(axis=0)


def earnings_residual(solution: EquilibriumSolution, earnings: ExpectedEarnings,
                      params: EconomicParams, tol: float = ACTIVE_TOL) -> float:
    mask = driver_inflow(solution) > tol
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(earnings.v[mask] - params.omega)))


_FAMILY_NAMES = {
    "lambda": "x-balance",
    "mu": "z-balance",
    "gamma": "relocation-sum",
    "nu": "case-balance",
    "ysum": "y-sum",
}


def _gradient(build: ProblemBuild, v, lam):
    q = build.qp
    return 2.0 * q.quad * v + q.lin + q.a_eq.T @ lam


def _certificate(build: ProblemBuild, v, lam) -> KktCertificate:
    q = build.qp
    g = _gradient(build, v, lam)
    labels = condition_labels(build.assignment, build.mode) if build.kind == "alternative" \
        else {name: f"{name}-stationarity" for name in build.index_map}
    per = []
    for name, sl in build.index_map.items():
        gb, vb = g[sl], v[sl]
        lo = vb - q.lower[sl]
        up = q.upper[sl] - vb
        # g < 0 needs v at its lower bound, g > 0 needs v at its upper bound
        res = np.where(g[sl] > 0, np.minimum(gb, np.abs(up)), np.minimum(-gb, np.abs(lo)))
        per.append((labels.get(name, f"{name}-stationarity"), float(np.max(res)) if res.size else 0.0))
    eq = q.a_eq @ v - q.b_eq
    for fam, sl in build.row_map.items():
        per.append((_FAMILY_NAMES.get(fam, fam), _inf(eq[sl])))
    bound = np.maximum(np.maximum(q.lower - v, v - q.upper), 0.0)
    per.append(("bounds", float(np.max(bound))))
    return KktCertificate(
        build.rows(lam, "lambda"), build.rows(lam, "mu"), build.rows(lam, "gamma"),
        max(val for _, val in per), per)


def certify_kkt(build: ProblemBuild, qp_result: QpResult) -> KktCertificate:
    """Evaluate the stationarity/complementarity system with the solver's duals."""
    lam = qp_result.duals_eq
    if lam is None or np.shape(lam) != (build.qp.k,):
        raise MissingDuals("QP result carries no equality duals for this build")
    return _certificate(build, np.asarray(qp_result.primal, dtype=float), np.asarray(lam))


def certify_point(build: ProblemBuild, v, active_tol: float = 1e-8) -> KktCertificate:
    """Certificate for a bare primal point, with the best duals an LP can find.

    Minimizes the largest stationarity violation over the equality duals,
    treating entries within ``active_tol`` of a bound as active.
    """
    q = build.qp
    v = np.asarray(v, dtype=float)
    grad = 2.0 * q.quad * v + q.lin
    At = q.a_eq.T.toarray()
    at_lo = v - q.lower <= active_tol
    at_up = q.upper - v <= active_tol
    m, k = At.shape
    # rows:  g_i - t <= 0 unless at_up,   -g_i - t <= 0 unless at_lo
    A_ub, b_ub = [], []
    for i in range(m):
        if not at_up[i]:
            A_ub.append(np.r_[At[i], -1.0])
            b_ub.append(-grad[i])
        if not at_lo[i]:
            A_ub.append(np.r_[-At[i], -1.0])
            b_ub.append(grad[i])
    cost = np.r_[np.zeros(k), 1.0]
    bounds = [(-1e6, 1e6)] * k + [(0, None)]
    res = linprog(cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=bounds,
                  method="highs")
    lam = res.x[:k] if res.status == 0 else np.zeros(k)
    return _certificate(build, v, lam)
