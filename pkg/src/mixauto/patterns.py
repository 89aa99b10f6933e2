"""Original HV/AV-priority problems on a fixed sign pattern.

Once it is known at which locations demand covers the priority fleet
(``d_i >= x_i`` under HV priority, ``d_i >= z_i`` under AV priority), every
min/max in the equilibrium equations resolves and the original problem is a
concave QP.  Enumerating all 2**n patterns gives its exact optimum, at
exponential cost; it serves as a cross-check for small networks.
"""
from __future__ import annotations

import itertools

from .model import Assignment, DemandPattern, DeploymentMode, EconomicParams
from .problems import ProblemBuild, _Rows, _add, _objective

MAX_EXHAUSTIVE_N = 10


def build_pattern_problem(pattern: DemandPattern, params: EconomicParams,
                          assignment: Assignment, case_pattern) -> ProblemBuild:
    if assignment is Assignment.WEIGHTED:
        raise ValueError("sign patterns apply to HV/AV priority only")
    n = pattern.n
    cover = tuple(bool(b) for b in case_pattern)
    if len(cover) != n:
        raise ValueError(f"pattern has {len(cover)} entries, expected {n}")
    a, beta = pattern.alpha, params.beta
    first, second = ("x", "z") if assignment is Assignment.HV_PRIORITY else ("z", "x")

    def served(j):
        """(priority-fleet rides, other-fleet rides) at j as linear terms."""
        if cover[j]:
            return {(first, (j,)): 1.0}, {("d", (j,)): 1.0, (first, (j,)): -1.0}
        return {("d", (j,)): 1.0}, {}

    def hv_served(j):
        return served(j)[0] if first == "x" else served(j)[1]

    def av_served(j):
        return served(j)[1] if first == "x" else served(j)[0]

    R = _Rows(n, ("d", "delta", "x", "z", "y", "r", "slack"))

    def lam(i):
        t = {("delta", (i,)): 1.0, ("x", (i,)): -1.0}
        for j in range(n):
            for key, coef in hv_served(j).items():
                _add(t, key, beta * a[j, i] * coef)
            _add(t, ("y", (j, i)), beta)
        return t

    def ysum(i):
        t = {("x", (i,)): 1.0}
        for key, coef in hv_served(i).items():
            _add(t, key, -coef)
        for j in range(n):
            _add(t, ("y", (i, j)), -1.0)
        return t

    def mu(i):
        t = {("z", (i,)): -1.0}
        for j in range(n):
            for key, coef in av_served(j).items():
                _add(t, key, a[j, i] * coef)
            _add(t, ("r", (j, i)), 1.0)
        return t

    def gamma(i):
        t = {("z", (i,)): 1.0}
        for key, coef in av_served(i).items():
            _add(t, key, -coef)
        for j in range(n):
            _add(t, ("r", (i, j)), -1.0)
        return t

    def nu(i):
        sign = 1.0 if cover[i] else -1.0
        return {("d", (i,)): sign, (first, (i,)): -sign, ("slack", (i,)): -1.0}

    for name, fill in (("lambda", lam), ("ysum", ysum), ("mu", mu), ("gamma", gamma),
                       ("nu", nu)):
        R.family(name, fill)
    qp = _objective(R, pattern, params)
    return ProblemBuild(assignment, DeploymentMode.MIXED, qp, dict(R.index_map),
                        dict(R.row_map), pattern, params, True, "pattern", cover)


def all_patterns(n: int):
    if n > MAX_EXHAUSTIVE_N:
        raise ValueError(f"exhaustive search is limited to n <= {MAX_EXHAUSTIVE_N}")
    return itertools.product((True, False), repeat=n)
