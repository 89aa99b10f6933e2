"""Domain types for mixed-autonomy ride-sharing networks.

A network is a stationary demand pattern (routing fractions plus rider
masses) together with the economic parameters of the platform.  All types
are frozen; arrays are copied and marked read-only on construction.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

ROW_SUM_TOL = 1e-12
NONNEG_TOL = 1e-9


class ModelError(ValueError):
    """Base class for invalid model inputs."""


class TooSmall(ModelError):
    pass


class BadRowSum(ModelError):
    def __init__(self, i: int, total: float):
        super().__init__(f"row {i} of alpha sums to {total!r}, expected 1")
        self.i = i


class NegativeEntry(ModelError):
    def __init__(self, i: int, j: int, value: float):
        super().__init__(f"alpha[{i}, {j}] = {value!r} is outside [0, 1]")
        self.i, self.j = i, j


class NonzeroDiagonal(ModelError):
    def __init__(self, i: int, value: float):
        super().__init__(f"alpha[{i}, {i}] = {value!r}, expected 0")
        self.i = i


class NotStronglyConnected(ModelError):
    pass


class NonPositiveTheta(ModelError):
    def __init__(self, i: int, value: float):
        super().__init__(f"theta[{i}] = {value!r} must be positive")
        self.i = i


class PriceOutOfRange(ModelError):
    def __init__(self, i: int, value: float):
        super().__init__(f"price p[{i}] = {value!r} is outside [0, pbar]")
        self.i = i


class BadParams(ModelError):
    pass


class Assignment(enum.Enum):
    HV_PRIORITY = "hv"
    AV_PRIORITY = "av"
    WEIGHTED = "weighted"


class DeploymentMode(enum.Enum):
    MIXED = "mixed"
    FORCED_HV_ONLY = "hv-only"
    FORCED_AV_ONLY = "av-only"


class Regime(enum.Enum):
    HV_ONLY = "HvOnly"
    AV_ONLY = "AvOnly"
    TRULY_MIXED = "TrulyMixed"


@dataclass(frozen=True)
class Tolerances:
    row_sum: float = ROW_SUM_TOL
    nonneg: float = NONNEG_TOL


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def is_strongly_connected(adj: np.ndarray) -> bool:
    """Forward and backward reachability from node 0 both cover the graph."""
    adj = np.asarray(adj, dtype=bool)
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


@dataclass(frozen=True)
class DemandPattern:
    n: int
    alpha: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "theta", _frozen(self.theta))


def validate_demand_pattern(n, alpha, theta, tol: Tolerances = Tolerances()) -> DemandPattern:
    n = int(n)
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if n < 2:
        raise TooSmall(f"n = {n}, need at least 2 locations")
    if alpha.shape != (n, n) or theta.shape != (n,):
        raise ModelError(
            f"dimension mismatch: n={n}, alpha {alpha.shape}, theta {theta.shape}"
        )
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(theta))):
        raise ModelError("alpha and theta must be finite")
    for i in range(n):
        if theta[i] <= 0:
            raise NonPositiveTheta(i, theta[i])
    for i in range(n):
        if alpha[i, i] != 0:
            raise NonzeroDiagonal(i, alpha[i, i])
        for j in range(n):
            if alpha[i, j] < 0 or alpha[i, j] > 1:
                raise NegativeEntry(i, j, alpha[i, j])
        total = alpha[i].sum()
        if abs(total - 1.0) > tol.row_sum:
            raise BadRowSum(i, total)
    if not is_strongly_connected(alpha > 0):
        raise NotStronglyConnected("routing graph is not strongly connected")
    return DemandPattern(n, alpha, theta)


@dataclass(frozen=True)
class EconomicParams:
    """Platform economics; ``av_cost_s`` is stored, ``k`` is derived."""

    beta: float
    omega: float
    av_cost_s: float
    pbar: float

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise BadParams(f"beta = {self.beta!r} must lie in (0, 1)")
        if not self.omega > 0:
            raise BadParams(f"omega = {self.omega!r} must be positive")
        if not self.av_cost_s >= 0:
            raise BadParams(f"s = {self.av_cost_s!r} must be nonnegative")
        if not self.pbar > 0:
            raise BadParams(f"pbar = {self.pbar!r} must be positive")

    @classmethod
    def from_k(cls, beta: float, omega: float, k: float, pbar: float) -> EconomicParams:
        return cls(beta, omega, k * omega * (1 - beta), pbar)

    @property
    def s(self) -> float:
        return self.av_cost_s

    @property
    def k(self) -> float:
        return self.av_cost_s / (1 - self.beta) / self.omega

    @property
    def driver_cost(self) -> float:
        """Per-period cost of keeping one driver, omega * (1 - beta)."""
        return self.omega * (1 - self.beta)

    def is_degenerate(self) -> bool:
        return self.driver_cost >= self.pbar and self.av_cost_s >= self.pbar


class UniformRevenue:
    """Revenue model for willingness to pay uniform on [0, pbar].

    Other concave distributions plug in by providing the same four methods.
    """

    def __init__(self, pbar: float):
        self.pbar = float(pbar)

    def demand(self, p, theta):
        return theta * (1.0 - np.asarray(p, dtype=float) / self.pbar)

    def price(self, d, theta):
        return self.pbar * (1.0 - np.asarray(d, dtype=float) / theta)

    def revenue(self, d, theta):
        d = np.asarray(d, dtype=float)
        return self.pbar * (d - d * d / theta)

    def quadratic_coefficients(self, theta):
        """(quad, lin) with revenue = quad * d**2 + lin * d."""
        theta = np.asarray(theta, dtype=float)
        return -self.pbar / theta, np.full_like(theta, self.pbar)


def demand_from_price(p, pattern: DemandPattern, params: EconomicParams) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    for i, v in enumerate(p):
        if not 0 <= v <= params.pbar:
            raise PriceOutOfRange(i, v)
    return UniformRevenue(params.pbar).demand(p, pattern.theta)


def price_from_demand(d, pattern: DemandPattern, params: EconomicParams) -> np.ndarray:
    return UniformRevenue(params.pbar).price(d, pattern.theta)


@dataclass(frozen=True)
class EquilibriumSolution:
    p: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray
    profit: float

    def __post_init__(self):
        for name in ("p", "c", "d", "delta", "x", "y", "z", "r"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "profit", float(self.profit))

    @property
    def n(self) -> int:
        return len(self.p)

    def replace(self, **changes) -> EquilibriumSolution:
        fields = {k: getattr(self, k) for k in
                  ("p", "c", "d", "delta", "x", "y", "z", "r", "profit")}
        fields.update(changes)
        return EquilibriumSolution(**fields)


def profit_of(d, delta, z, pattern: DemandPattern, params: EconomicParams) -> float:
    rev = UniformRevenue(params.pbar).revenue(d, pattern.theta)
    return float(rev.sum() - params.omega * np.sum(delta) - params.av_cost_s * np.sum(z))


@dataclass(frozen=True)
class ExpectedEarnings:
    v: np.ndarray
    max_v: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v))
        object.__setattr__(self, "max_v", float(np.max(self.v)))


@dataclass(frozen=True)
class Scenario:
    pattern: DemandPattern
    params: EconomicParams


def star_to_complete_alpha(n: int, xi: float) -> np.ndarray:
    """Routing matrix xi * complete + (1 - xi) * star, hub at index 0."""
    c1 = xi / (n - 1) + (1 - xi)
    c2 = xi / (n - 1)
    alpha = np.full((n, n), c2)
    alpha[0, :] = 1.0 / (n - 1)
    alpha[1:, 0] = c1
    np.fill_diagonal(alpha, 0.0)
    return alpha


def scenario_from_dict(doc: dict) -> Scenario:
    """Parse a scenario document.

    Either explicit ``n``/``alpha``/``theta`` or the shorthand
    ``{"star_to_complete": {"n": ..., "xi": ...}}`` (theta = ones), and
    exactly one of ``s``/``k``.
    """
    if not isinstance(doc, dict):
        raise ModelError("scenario must be a JSON object")
    explicit = any(key in doc for key in ("alpha", "theta"))
    if explicit == ("star_to_complete" in doc):
        raise ModelError("give exactly one of alpha/theta or star_to_complete")
    if explicit:
        try:
            pattern = validate_demand_pattern(doc["n"], doc["alpha"], doc["theta"])
        except KeyError as exc:
            raise ModelError(f"missing field {exc.args[0]!r}") from None
    else:
        sc = doc["star_to_complete"]
        n, xi = int(sc["n"]), float(sc["xi"])
        if n < 3 or not 0 <= xi <= 1:
            raise ModelError(f"star_to_complete needs n >= 3 and xi in [0, 1], got {n}, {xi}")
        pattern = validate_demand_pattern(n, star_to_complete_alpha(n, xi), np.ones(n))
    if ("s" in doc) == ("k" in doc):
        raise ModelError("give exactly one of 's' or 'k'")
    try:
        beta, omega, pbar = float(doc["beta"]), float(doc["omega"]), float(doc["pbar"])
    except KeyError as exc:
        raise ModelError(f"missing field {exc.args[0]!r}") from None
    if "k" in doc:
        params = EconomicParams.from_k(beta, omega, float(doc["k"]), pbar)
    else:
        params = EconomicParams(beta, omega, float(doc["s"]), pbar)
    return Scenario(pattern, params)


def scenario_to_dict(scenario: Scenario) -> dict:
    pat, par = scenario.pattern, scenario.params
    return {
        "n": pat.n,
        "alpha": pat.alpha.tolist(),
        "theta": pat.theta.tolist(),
        "beta": par.beta,
        "omega": par.omega,
        "s": par.av_cost_s,
        "pbar": par.pbar,
    }


def load_scenario(path) -> Scenario:
    with open(Path(path)) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed JSON in {path}: {exc}") from None
    return scenario_from_dict(doc)
