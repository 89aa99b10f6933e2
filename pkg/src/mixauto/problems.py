"""Convex alternative problems as QPs in the served-demand variables.

Every constraint row is written as ``rhs - lhs = 0`` so that, with the QP
dual convention ``grad f + A'lam + mu_bound = 0``, the equality duals are
the multipliers lambda (x-balance), mu (z-balance) and gamma
(relocation-sum) with the signs used in the stationarity inequalities.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import (
    Assignment,
    DemandPattern,
    DeploymentMode,
    EconomicParams,
    UniformRevenue,
)
from .qp import QpProblem

BLOCK_ORDER = ("d", "delta", "x", "z", "y", "r", "slack")
MATRIX_BLOCKS = ("y", "r")
ROW_FAMILIES = ("lambda", "mu", "gamma", "nu")


class DegenerateParams(UserWarning):
    """Driver and AV costs both exceed the top willingness to pay."""


_BLOCKS = {
    (Assignment.HV_PRIORITY, DeploymentMode.MIXED): ("d", "delta", "x", "z", "r"),
    (Assignment.AV_PRIORITY, DeploymentMode.MIXED): ("d", "delta", "x", "z", "y"),
    (Assignment.WEIGHTED, DeploymentMode.MIXED): ("d", "delta", "x", "z", "y", "r"),
}
_FORCED_HV = ("d", "delta", "x", "y")
_FORCED_AV = ("d", "z", "r")

# stationarity condition id per variable block
_LABELS = {
    (Assignment.HV_PRIORITY, DeploymentMode.MIXED):
        {"d": "d-stationarity", "delta": "dk-1", "x": "dk-2", "z": "dk-3", "r": "dk-4"},
    (Assignment.AV_PRIORITY, DeploymentMode.MIXED):
        {"d": "d-stationarity", "delta": "ak-1", "x": "ak-2", "z": "ak-3", "y": "ak-4"},
    (Assignment.WEIGHTED, DeploymentMode.MIXED):
        {"d": "wk-1", "delta": "wk-2", "x": "wk-3", "z": "wk-4", "y": "wk-5", "r": "wk-6"},
    DeploymentMode.FORCED_HV_ONLY:
        {"d": "d-stationarity", "delta": "dk-1", "x": "dk-2", "y": "y-relocation"},
    DeploymentMode.FORCED_AV_ONLY:
        {"d": "d-stationarity", "z": "z-fleet", "r": "r-relocation"},
}


def blocks_for(assignment: Assignment, mode: DeploymentMode) -> tuple[str, ...]:
    if mode is DeploymentMode.FORCED_HV_ONLY:
        return _FORCED_HV
    if mode is DeploymentMode.FORCED_AV_ONLY:
        return _FORCED_AV
    return _BLOCKS[(assignment, mode)]


def condition_labels(assignment: Assignment, mode: DeploymentMode) -> dict[str, str]:
    if mode is DeploymentMode.MIXED:
        labels = dict(_LABELS[(assignment, mode)])
    else:
        labels = dict(_LABELS[mode])
    labels["slack"] = "case-slack"
    return labels


@dataclass(frozen=True)
class ProblemBuild:
    assignment: Assignment
    mode: DeploymentMode
    qp: QpProblem
    index_map: dict
    row_map: dict
    pattern: DemandPattern
    params: EconomicParams
    restricted: bool = False
    kind: str = "alternative"
    case_pattern: tuple = ()

    @property
    def n(self) -> int:
        return self.pattern.n

    def block(self, v, name):
        """Slice block ``name`` out of a QP vector; None when absent."""
        sl = self.index_map.get(name)
        if sl is None:
            return None
        out = np.asarray(v)[sl]
        return out.reshape(self.n, self.n) if name in MATRIX_BLOCKS else out

    def rows(self, duals, family):
        sl = self.row_map.get(family)
        return None if sl is None else np.asarray(duals)[sl]

    def assemble(self, **blocks) -> np.ndarray:
        """Inverse of ``block``: missing blocks are filled with zeros."""
        v = np.zeros(self.qp.m)
        for name, sl in self.index_map.items():
            if name in blocks and blocks[name] is not None:
                v[sl] = np.ravel(blocks[name])
        return v


class _Rows:
    """COO accumulator for equality rows over named variable blocks."""

    def __init__(self, n: int, blocks: tuple[str, ...]):
        self.n = n
        self.index_map = {}
        off = 0
        for name in blocks:
            size = n * n if name in MATRIX_BLOCKS else n
            self.index_map[name] = slice(off, off + size)
            off += size
        self.m = off
        self.rows, self.cols, self.vals = [], [], []
        self.k = 0
        self.row_map = {}

    def col(self, name, i, j=None):
        start = self.index_map[name].start
        return start + (i if j is None else i * self.n + j)

    def family(self, name, fill):
        start = self.k
        for i in range(self.n):
            for (block, idx), coef in fill(i).items():
                if coef != 0.0:
                    self.rows.append(self.k)
                    self.cols.append(self.col(block, *idx))
                    self.vals.append(coef)
            self.k += 1
        self.row_map[name] = slice(start, self.k)

    def matrix(self):
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.k, self.m))


def _add(terms, key, coef):
    terms[key] = terms.get(key, 0.0) + coef


def _hv_mixed(R, a, beta):
    n = R.n

    def lam(i):  # delta_i + beta sum_j a_ji x_j - x_i
        t = {("delta", (i,)): 1.0}
        for j in range(n):
            _add(t, ("x", (j,)), beta * a[j, i])
        _add(t, ("x", (i,)), -1.0)
        return t

    def mu(i):  # sum_j a_ji (d_j - x_j) + sum_j r_ji - z_i
        t = {}
        for j in range(n):
            _add(t, ("d", (j,)), a[j, i])
            _add(t, ("x", (j,)), -a[j, i])
            _add(t, ("r", (j, i)), 1.0)
        _add(t, ("z", (i,)), -1.0)
        return t

    def gamma(i):  # z_i - (d_i - x_i) - sum_j r_ij
        t = {("z", (i,)): 1.0, ("d", (i,)): -1.0, ("x", (i,)): 1.0}
        for j in range(n):
            _add(t, ("r", (i, j)), -1.0)
        return t

    R.family("lambda", lam)
    R.family("mu", mu)
    R.family("gamma", gamma)


def _av_mixed(R, a, beta):
    n = R.n

    def lam(i):  # beta [sum_j a_ji (d_j - z_j) + sum_j y_ji] + delta_i - x_i
        t = {("delta", (i,)): 1.0, ("x", (i,)): -1.0}
        for j in range(n):
            _add(t, ("d", (j,)), beta * a[j, i])
            _add(t, ("z", (j,)), -beta * a[j, i])
            _add(t, ("y", (j, i)), beta)
        return t

    def mu(i):  # sum_j a_ji z_j - z_i
        t = {}
        for j in range(n):
            _add(t, ("z", (j,)), a[j, i])
        _add(t, ("z", (i,)), -1.0)
        return t

    def gamma(i):  # x_i - (d_i - z_i) - sum_j y_ij
        t = {("x", (i,)): 1.0, ("d", (i,)): -1.0, ("z", (i,)): 1.0}
        for j in range(n):
            _add(t, ("y", (i, j)), -1.0)
        return t

    R.family("lambda", lam)
    R.family("mu", mu)
    R.family("gamma", gamma)


def _weighted_mixed(R, a, beta):
    n = R.n

    def lam(i):  # beta [sum a_ji d_j + sum y_ji + sum r_ji] + delta_i - x_i - beta z_i
        t = {("delta", (i,)): 1.0, ("x", (i,)): -1.0, ("z", (i,)): -beta}
        for j in range(n):
            _add(t, ("d", (j,)), beta * a[j, i])
            _add(t, ("y", (j, i)), beta)
            _add(t, ("r", (j, i)), beta)
        return t

    def mu(i):  # z_i - sum a_ji z_j - sum_j r_ji + sum_j a_ji sum_k r_jk
        t = {("z", (i,)): 1.0}
        for j in range(n):
            _add(t, ("z", (j,)), -a[j, i])
            _add(t, ("r", (j, i)), -1.0)
            if a[j, i]:
                for k in range(n):
                    _add(t, ("r", (j, k)), a[j, i])
        return t

    def gamma(i):  # x_i + z_i - d_i - sum_j y_ij - sum_j r_ij
        t = {("x", (i,)): 1.0, ("z", (i,)): 1.0, ("d", (i,)): -1.0}
        for j in range(n):
            _add(t, ("y", (i, j)), -1.0)
            _add(t, ("r", (i, j)), -1.0)
        return t

    R.family("lambda", lam)
    R.family("mu", mu)
    R.family("gamma", gamma)


def _forced_hv(R, a, beta):
    n = R.n

    def lam(i):  # beta [sum a_ji d_j + sum y_ji] + delta_i - x_i
        t = {("delta", (i,)): 1.0, ("x", (i,)): -1.0}
        for j in range(n):
            _add(t, ("d", (j,)), beta * a[j, i])
            _add(t, ("y", (j, i)), beta)
        return t

    def gamma(i):  # x_i - d_i - sum_j y_ij
        t = {("x", (i,)): 1.0, ("d", (i,)): -1.0}
        for j in range(n):
            _add(t, ("y", (i, j)), -1.0)
        return t

    R.family("lambda", lam)
    R.family("gamma", gamma)


def _forced_av(R, a, beta):
    n = R.n

    def mu(i):  # sum a_ji d_j + sum r_ji - z_i
        t = {("z", (i,)): -1.0}
        for j in range(n):
            _add(t, ("d", (j,)), a[j, i])
            _add(t, ("r", (j, i)), 1.0)
        return t

    def gamma(i):  # z_i - d_i - sum_j r_ij
        t = {("z", (i,)): 1.0, ("d", (i,)): -1.0}
        for j in range(n):
            _add(t, ("r", (i, j)), -1.0)
        return t

    R.family("mu", mu)
    R.family("gamma", gamma)


def _objective(R: _Rows, pattern: DemandPattern, params: EconomicParams) -> QpProblem:
    """Revenue in d minus omega per entering driver and s per AV."""
    quad = np.zeros(R.m)
    lin = np.zeros(R.m)
    upper = np.full(R.m, np.inf)
    dq, dl = UniformRevenue(params.pbar).quadratic_coefficients(pattern.theta)
    sl = R.index_map["d"]
    quad[sl], lin[sl], upper[sl] = dq, dl, pattern.theta
    if "delta" in R.index_map:
        lin[R.index_map["delta"]] = -params.omega
    if "z" in R.index_map:
        lin[R.index_map["z"]] = -params.av_cost_s
    return QpProblem(quad, lin, R.matrix(), np.zeros(R.k), np.zeros(R.m), upper)


def build_alternative(pattern: DemandPattern, params: EconomicParams,
                      assignment: Assignment,
                      mode: DeploymentMode = DeploymentMode.MIXED,
                      restrict_case: bool = False) -> ProblemBuild:
    """Assemble the alternative problem for ``assignment`` under ``mode``.

    Forced deployments share one structure across assignments: with no AVs
    (or no HVs) the three priority rules coincide.

    ``restrict_case`` adds ``d >= x`` (HV priority) or ``d >= z`` (AV
    priority) through a nonnegative slack block.  On that region the
    alternative problem coincides with the original one, so its optimum is
    always recoverable.
    """
    if restrict_case and (mode is not DeploymentMode.MIXED
                          or assignment is Assignment.WEIGHTED):
        raise ValueError("restrict_case applies to mixed HV/AV priority only")
    if params.is_degenerate():
        warnings.warn(
            f"driver cost {params.driver_cost:g} and AV cost {params.s:g} both reach "
            f"pbar = {params.pbar:g}; the optimum serves no riders",
            DegenerateParams, stacklevel=2)
    blocks = blocks_for(assignment, mode)
    if restrict_case:
        blocks = blocks + ("slack",)
    R = _Rows(pattern.n, blocks)
    a, beta = pattern.alpha, params.beta
    if mode is DeploymentMode.FORCED_HV_ONLY:
        _forced_hv(R, a, beta)
    elif mode is DeploymentMode.FORCED_AV_ONLY:
        _forced_av(R, a, beta)
    elif assignment is Assignment.HV_PRIORITY:
        _hv_mixed(R, a, beta)
    elif assignment is Assignment.AV_PRIORITY:
        _av_mixed(R, a, beta)
    else:
        _weighted_mixed(R, a, beta)
    if restrict_case:
        other = "x" if assignment is Assignment.HV_PRIORITY else "z"
        R.family("nu", lambda i: {("d", (i,)): 1.0, (other, (i,)): -1.0,
                                  ("slack", (i,)): -1.0})

    qp = _objective(R, pattern, params)
    return ProblemBuild(assignment, mode, qp, dict(R.index_map), dict(R.row_map),
                        pattern, params, restrict_case)
