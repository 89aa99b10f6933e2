"""Forward mass-balance dynamics.

One period: riders are matched to idle-at-location vehicles by the
assignment rule, served vehicles follow the demand pattern, unmatched ones
relocate by a policy, and each driver stays with probability beta before
new drivers ``delta`` enter.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import Assignment, DemandPattern, EconomicParams, EquilibriumSolution, demand_from_price
from .verify import served_split

ROW_TOL = 1e-12


@dataclass(frozen=True)
class FleetState:
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "z"):
            v = np.array(getattr(self, name), dtype=float)
            if v.ndim != 1 or (v < 0).any():
                raise ValueError(f"{name} must be a nonnegative vector")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.x.shape != self.z.shape:
            raise ValueError("x and z differ in length")

    def distance(self, other: FleetState) -> float:
        return float(max(np.max(np.abs(self.x - other.x)), np.max(np.abs(self.z - other.z))))

    def scaled(self, factor: float) -> FleetState:
        return FleetState(self.x * factor, self.z * factor)


def _stochastic(w, name):
    w = np.array(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"{name} must be square")
    if (w < 0).any() or np.max(np.abs(w.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ValueError(f"{name} rows must be nonnegative and sum to 1")
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class RelocationPolicy:
    """Where idle HVs (``y_weights``) and AVs (``r_weights``) go, row-stochastic."""

    y_weights: np.ndarray
    r_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y_weights", _stochastic(self.y_weights, "y_weights"))
        object.__setattr__(self, "r_weights", _stochastic(self.r_weights, "r_weights"))

    @classmethod
    def uniform(cls, n: int) -> RelocationPolicy:
        w = _normalize(np.zeros((n, n)))
        return cls(w, w.copy())


def _normalize(m):
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    tot = m.sum(axis=1, keepdims=True)
    fallback = (np.ones((n, n)) - np.eye(n)) / (n - 1)
    out = np.where(tot > 0, m / np.where(tot > 0, tot, 1.0), fallback)
    # renormalize away rounding so rows pass the stochastic check
    return out / out.sum(axis=1, keepdims=True)


def induced_policy(solution: EquilibriumSolution) -> RelocationPolicy:
    """Normalized equilibrium relocations; uniform over other locations for empty rows."""
    return RelocationPolicy(_normalize(np.maximum(solution.y, 0.0)),
                            _normalize(np.maximum(solution.r, 0.0)))


def step(state: FleetState, p, delta, policy: RelocationPolicy, pattern: DemandPattern,
         params: EconomicParams, assignment: Assignment) -> FleetState:
    d = demand_from_price(p, pattern, params)
    h, a = served_split(d, state.x, state.z, assignment)
    alpha = pattern.alpha
    x = params.beta * (alpha.T @ h + policy.y_weights.T @ (state.x - h)) + np.asarray(delta, float)
    z = alpha.T @ a + policy.r_weights.T @ (state.z - a)
    return FleetState(np.maximum(x, 0.0), np.maximum(z, 0.0))


@dataclass(frozen=True)
class Trajectory:
    final: FleetState
    converged: bool
    steps: int
    rows: tuple  # (step, sum_x, sum_z, max_state_delta)
    states: tuple = ()

    def __iter__(self):
        # allows ``state, converged, steps = iterate_to_fixed_point(...)``
        return iter((self.final, self.converged, self.steps))

    def write_csv(self, fh, wide: bool = False) -> None:
        w = csv.writer(fh, lineterminator="\n")
        head = ["step", "sum_x", "sum_z", "max_state_delta"]
        n = self.final.x.size
        if wide:
            head += [f"x{i}" for i in range(n)] + [f"z{i}" for i in range(n)]
        w.writerow(head)
        for k, row in enumerate(self.rows):
            out = [row[0]] + [f"{v:.12g}" for v in row[1:]]
            if wide:
                s = self.states[k]
                out += [f"{v:.12g}" for v in np.r_[s.x, s.z]]
            w.writerow(out)


def iterate_to_fixed_point(initial: FleetState, p, delta, policy: RelocationPolicy,
                           pattern: DemandPattern, params: EconomicParams,
                           assignment: Assignment, max_steps: int = 10000,
                           tol: float = 1e-10, keep_states: bool = False) -> Trajectory:
    if not tol > 0:
        raise ValueError("tol must be positive")
    state = initial
    rows = [(0, float(state.x.sum()), float(state.z.sum()), float("nan"))]
    states = [state]
    for k in range(1, max_steps + 1):
        nxt = step(state, p, delta, policy, pattern, params, assignment)
        gap = nxt.distance(state)
        state = nxt
        rows.append((k, float(state.x.sum()), float(state.z.sum()), gap))
        if keep_states:
            states.append(state)
        if gap < tol:
            return Trajectory(state, True, k, tuple(rows), tuple(states) if keep_states else ())
    return Trajectory(state, False, max_steps, tuple(rows), tuple(states) if keep_states else ())


def fixed_point_residual(solution: EquilibriumSolution, pattern: DemandPattern,
                         params: EconomicParams, assignment: Assignment) -> float:
    """One-step sup-norm change from the solution under its induced policy."""
    state = FleetState(np.maximum(solution.x, 0.0), np.maximum(solution.z, 0.0))
    nxt = step(state, solution.p, solution.delta, induced_policy(solution), pattern, params,
               assignment)
    return nxt.distance(state)
