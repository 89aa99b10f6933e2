"""Operator-splitting solver for separable concave quadratic programs.

Solves

    maximize    sum_i quad_i * v_i**2 + lin_i * v_i
    subject to  a_eq @ v = b_eq,   lower <= v <= upper

with ``quad <= 0``.  Internally this is the minimization
``1/2 v'Pv + q'v`` with ``P = diag(-2 quad)`` and ``q = -lin``, handled by an
ADMM iteration of the OSQP family: Ruiz equilibration, over-relaxation,
adaptive step size, and a final active-set polish that solves the reduced
KKT system exactly.

Duals follow the Lagrangian ``f(v) + lam'(a_eq v - b_eq) + mu'(v - bound)``
of the maximization, so at the optimum

    grad f(v) + a_eq' lam + mu = 0,

with ``mu >= 0`` on variables at their lower bound and ``mu <= 0`` on
variables at their upper bound.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class QpError(ValueError):
    pass


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class QpProblem:
    quad: np.ndarray
    lin: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray | None = None

    def __post_init__(self):
        quad = np.array(self.quad, dtype=float)
        lin = np.array(self.lin, dtype=float)
        a_eq = sp.csr_matrix(self.a_eq, dtype=float)
        b_eq = np.array(self.b_eq, dtype=float)
        lower = np.array(self.lower, dtype=float)
        m = quad.shape[0]
        upper = np.full(m, np.inf) if self.upper is None else np.array(self.upper, dtype=float)
        if lin.shape != (m,) or lower.shape != (m,) or upper.shape != (m,):
            raise QpError("quad, lin, lower and upper must have the same length")
        if a_eq.shape[1] != m or b_eq.shape != (a_eq.shape[0],):
            raise QpError(f"a_eq is {a_eq.shape}, b_eq is {b_eq.shape}, m = {m}")
        if np.any(quad > 0):
            raise QpError("objective must be concave (quad <= 0)")
        if np.any(np.diff(a_eq.indptr) == 0) or np.any(abs(a_eq).sum(axis=1) == 0):
            raise QpError("a_eq has an all-zero row")
        if np.any(lower > upper) or np.any(np.isposinf(lower)) or np.any(np.isneginf(upper)):
            raise QpError("inconsistent bounds")
        for name, arr in (("quad", quad), ("lin", lin), ("lower", lower), ("upper", upper),
                          ("b_eq", b_eq)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "a_eq", a_eq)

    @property
    def m(self) -> int:
        return self.quad.shape[0]

    @property
    def k(self) -> int:
        return self.a_eq.shape[0]

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(self.quad @ (v * v) + self.lin @ v)

    def row_scaled(self, scale) -> QpProblem:
        s = sp.diags(np.asarray(scale, dtype=float))
        return QpProblem(self.quad, self.lin, s @ self.a_eq, scale * self.b_eq,
                         self.lower, self.upper)


@dataclass(frozen=True)
class QpSettings:
    eps_primal: float = 1e-8
    eps_dual: float = 1e-8
    max_iter: int = 200_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    check_every: int = 10
    adapt_every: int = 100
    polish: bool = True
    infeas_window: int = 1000
    eps_infeas: float = 1e-6


@dataclass(frozen=True)
class QpResult:
    status: Status
    primal: np.ndarray
    duals_eq: np.ndarray
    duals_bound: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(problem: QpProblem, v, lam, mu) -> tuple[float, float]:
    """Absolute (primal, dual) residuals of a candidate primal/dual pair.

    The dual residual covers stationarity, the sign of ``mu`` and
    complementary slackness between ``mu`` and the bound slacks.
    """
    v = np.asarray(v, dtype=float)
    eq = problem.a_eq @ v - problem.b_eq
    viol = np.maximum(problem.lower - v, 0.0)
    viol = np.maximum(viol, v - problem.upper)
    primal = max(_inf_norm(eq), _inf_norm(viol))
    grad = 2.0 * problem.quad * v + problem.lin
    stat = grad + problem.a_eq.T @ lam + mu
    slack_lo = np.where(np.isfinite(problem.lower), v - problem.lower, np.inf)
    slack_up = np.where(np.isfinite(problem.upper), problem.upper - v, np.inf)
    # mu > 0 is only allowed against the lower bound, mu < 0 against the upper
    comp_lo = np.minimum(np.maximum(mu, 0.0), np.abs(slack_lo))
    comp_up = np.minimum(np.maximum(-mu, 0.0), np.abs(slack_up))
    dual = max(_inf_norm(stat), _inf_norm(comp_lo), _inf_norm(comp_up))
    return primal, dual


def dual_objective(problem: QpProblem, lam, mu) -> float:
    """Lagrange dual function at (lam, mu), sup over v of the Lagrangian.

    Bound multipliers are split by sign into lower/upper parts.  Components
    with ``quad == 0`` contribute nothing when their reduced cost vanishes
    (they would otherwise make the supremum infinite); callers pass
    converged duals, so residual reduced costs there are solver noise.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    coef = problem.lin + problem.a_eq.T @ lam + mu
    q = problem.quad
    strict = q < 0
    value = float(np.sum(-coef[strict] ** 2 / (4.0 * q[strict])))
    mu_lo = np.maximum(mu, 0.0)
    mu_up = np.minimum(mu, 0.0)
    lo = np.where(mu_lo > 0, problem.lower, 0.0)
    up = np.where(mu_up < 0, problem.upper, 0.0)
    return value - float(lam @ problem.b_eq) - float(mu_lo @ lo) - float(mu_up @ up)


def _inf_norm(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


class _Scaled:
    """Ruiz-equilibrated copy of the problem in OSQP minimization form."""

    def __init__(self, problem: QpProblem, iters: int):
        m, k = problem.m, problem.k
        P = -2.0 * problem.quad
        q = -problem.lin
        C = np.vstack([problem.a_eq.toarray(), np.eye(m)])
        l = np.concatenate([problem.b_eq, problem.lower])
        u = np.concatenate([problem.b_eq, problem.upper])
        D = np.ones(m)
        E = np.ones(k + m)
        Ps, Cs = P.copy(), C.copy()
        for _ in range(iters):
            col = np.maximum(np.abs(Ps), np.max(np.abs(Cs), axis=0))
            row = np.max(np.abs(Cs), axis=1)
            dD = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            dE = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            D *= dD
            E *= dE
            Ps = dD * Ps * dD
            Cs = dE[:, None] * Cs * dD[None, :]
        qs = D * q
        cost = max(np.mean(np.abs(Ps)) if m else 1.0, _inf_norm(qs))
        c = 1.0 / np.clip(cost, 1e-4, 1e4)
        self.P = c * Ps
        self.q = c * qs
        self.C = Cs
        self.l = E * l
        self.u = E * u
        self.D, self.E, self.c = D, E, c
        self.k = k
        self.m = m

    def unscale(self, x, z, y):
        return self.D * x, z / self.E, self.E * y / self.c


def _rho_vector(sc: _Scaled, rho: float) -> np.ndarray:
    rv = np.full(sc.k + sc.m, rho)
    eq = np.isclose(sc.l, sc.u) & np.isfinite(sc.l)
    rv[eq] = 1e3 * rho
    free = np.isneginf(sc.l) & np.isposinf(sc.u)
    rv[free] = 1e-6 * rho
    return rv


def _factor(sc: _Scaled, sigma: float, rv: np.ndarray):
    K = np.diag(sc.P + sigma) + sc.C.T @ (rv[:, None] * sc.C)
    return sla.cho_factor(K, lower=True, check_finite=False)


def _split(problem: QpProblem, y_unscaled: np.ndarray):
    """OSQP-convention duals (y) to maximization duals (lam, mu)."""
    k = problem.k
    return -y_unscaled[:k], -y_unscaled[k:]


def _polish(problem: QpProblem, v_ref, lam_ref, mu_ref, tol):
    """Solve the equality-constrained problem on the guessed active set.

    Returns (v, lam, mu) or None when the guess fails sign or bound checks.
    """
    m = problem.m
    lower, upper = problem.lower, problem.upper
    at_lo = np.isfinite(lower) & ((v_ref - lower) < mu_ref)
    at_up = np.isfinite(upper) & ((upper - v_ref) < -mu_ref) & ~at_lo
    fixed = at_lo | at_up
    free = ~fixed
    v = v_ref.copy()
    v[at_lo] = lower[at_lo]
    v[at_up] = upper[at_up]
    A = problem.a_eq.toarray()
    Af, Au = A[:, fixed], A[:, free]
    P = -2.0 * problem.quad
    nu, k = int(free.sum()), problem.k
    K = np.zeros((nu + k, nu + k))
    K[:nu, :nu] = np.diag(P[free])
    K[:nu, nu:] = -Au.T
    K[nu:, :nu] = Au
    rhs = np.concatenate([problem.lin[free], problem.b_eq - Af @ v[fixed]])
    ref = np.concatenate([v_ref[free], lam_ref])
    for _ in range(3):
        step, *_ = np.linalg.lstsq(K, rhs - K @ ref, rcond=None)
        ref = ref + step
    v[free] = ref[:nu]
    lam = ref[nu:]
    grad = 2.0 * problem.quad * v + problem.lin
    mu = -(grad + A.T @ lam)
    mu[free] = 0.0
    if np.any(mu[at_lo] < -tol) or np.any(mu[at_up] > tol):
        return None
    if np.any(v[free] < lower[free] - tol) or np.any(v[free] > upper[free] + tol):
        return None
    return v, lam, mu


def solve_qp(problem: QpProblem, settings: QpSettings = QpSettings()) -> QpResult:
    """Maximize the concave quadratic ``problem``; deterministic for fixed inputs."""
    s = settings
    sc = _Scaled(problem, s.scaling_iter)
    mc = sc.k + sc.m
    x = np.zeros(sc.m)
    z = np.clip(np.zeros(mc), sc.l, sc.u)
    y = np.zeros(mc)
    rho = s.rho
    rv = _rho_vector(sc, rho)
    factor = _factor(sc, s.sigma, rv)
    y_window = y.copy()
    last_active = None
    best = None
    prim = dual = math.inf
    it = 0
    info = {"rho_updates": 0, "polish_attempts": 0}

    def candidate(v, lam, mu, polished):
        pr, du = kkt_residuals(problem, v, lam, mu)
        return (max(pr / s.eps_primal, du / s.eps_dual), pr, du, v, lam, mu, polished)

    for it in range(1, s.max_iter + 1):
        rhs = s.sigma * x - sc.q + sc.C.T @ (rv * z - y)
        xt = sla.cho_solve(factor, rhs, check_finite=False)
        zt = sc.C @ xt
        x = s.alpha * xt + (1.0 - s.alpha) * x
        zr = s.alpha * zt + (1.0 - s.alpha) * z
        z_new = np.clip(zr + y / rv, sc.l, sc.u)
        y = y + rv * (zr - z_new)
        z = z_new

        if it % s.check_every:
            continue
        v, zu, yu = sc.unscale(x, z, y)
        lam, mu = _split(problem, yu)
        cand = candidate(v, lam, mu, False)
        prim, dual = cand[1], cand[2]
        if best is None or cand[0] < best[0]:
            best = cand
        if s.polish and max(prim, dual) < 1e-3:
            active = (tuple(np.flatnonzero(mu > 0)), tuple(np.flatnonzero(mu < 0)))
            if active != last_active or it % (10 * s.check_every) == 0:
                last_active = active
                info["polish_attempts"] += 1
                pol = _polish(problem, v, lam, mu, tol=max(s.eps_primal, s.eps_dual))
                if pol is not None:
                    pc = candidate(*pol, True)
                    if pc[0] < best[0]:
                        best = pc
        if best[0] <= 1.0:
            return _result(problem, Status.OPTIMAL, best, it, info)

        if it % s.adapt_every == 0:
            new_rho = _adapt_rho(sc, x, z, y, rho)
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                rv = _rho_vector(sc, rho)
                factor = _factor(sc, s.sigma, rv)
                info["rho_updates"] += 1

        if it % s.infeas_window == 0:
            dy = y - y_window
            y_window = y.copy()
            if _primal_infeasible(sc, dy, s.eps_infeas):
                info["certificate"] = (sc.E * dy / sc.c).tolist()
                return _result(problem, Status.INFEASIBLE, best, it, info)

    return _result(problem, Status.MAX_ITERATIONS, best, it, info)


def _adapt_rho(sc: _Scaled, x, z, y, rho) -> float:
    Cx = sc.C @ x
    Px = sc.P * x
    Cty = sc.C.T @ y
    r_p = _inf_norm(Cx - z) / max(_inf_norm(Cx), _inf_norm(z), 1e-12)
    r_d = _inf_norm(Px + sc.q + Cty) / max(_inf_norm(Px), _inf_norm(Cty), _inf_norm(sc.q), 1e-12)
    new = rho * math.sqrt(r_p / max(r_d, 1e-12))
    return float(np.clip(new, 1e-6, 1e6))


def _primal_infeasible(sc: _Scaled, dy, eps) -> bool:
    norm = _inf_norm(dy)
    if norm < 1e-6:
        return False
    dy = dy / norm
    if _inf_norm(sc.C.T @ dy) > eps:
        return False
    pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
    if np.any((pos > eps) & np.isposinf(sc.u)) or np.any((neg < -eps) & np.isneginf(sc.l)):
        return False
    u = np.where(np.isfinite(sc.u), sc.u, 0.0)
    l = np.where(np.isfinite(sc.l), sc.l, 0.0)
    return float(u @ pos + l @ neg) < -eps


def _result(problem, status, best, it, info) -> QpResult:
    if best is None:
        m, k = problem.m, problem.k
        v, lam, mu, pr, du, polished = np.zeros(m), np.zeros(k), np.zeros(m), math.inf, math.inf, False
    else:
        _, pr, du, v, lam, mu, polished = best
    return QpResult(status, np.asarray(v), np.asarray(lam), np.asarray(mu),
                    problem.objective(v), pr, du, it, polished, info)


def dump_problem(problem: QpProblem, fh: TextIO) -> None:
    """Write a plain coordinate listing of the problem data."""
    a = problem.a_eq.tocoo()
    fh.write("%%QpProblem maximize sum quad*v^2 + lin*v s.t. a_eq v = b_eq, lower <= v <= upper\n")
    fh.write(f"{problem.m} {problem.k} {a.nnz}\n")
    fh.write("# i quad lin lower upper\n")
    for i in range(problem.m):
        fh.write(f"{i + 1} {problem.quad[i]:.17g} {problem.lin[i]:.17g} "
                 f"{problem.lower[i]:.17g} {problem.upper[i]:.17g}\n")
    fh.write("# row col value\n")
    for r, c, val in sorted(zip(a.row.tolist(), a.col.tolist(), a.data.tolist())):
        fh.write(f"{r + 1} {c + 1} {val:.17g}\n")
    fh.write("# row b_eq\n")
    for r in range(problem.k):
        fh.write(f"{r + 1} {problem.b_eq[r]:.17g}\n")
