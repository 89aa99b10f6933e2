"""Star-to-complete networks: closed-form cost thresholds and k-sweeps."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .equilibrium import solve_equilibrium
from .model import (
    Assignment,
    DemandPattern,
    DeploymentMode,
    EconomicParams,
    Regime,
    star_to_complete_alpha,
    validate_demand_pattern,
)
from .qp import QpSettings

SLACK = 1e-12


@dataclass(frozen=True)
class StarCompleteSpec:
    n: int
    xi: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"n = {self.n!r} must be an integer >= 3")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi = {self.xi!r} must lie in [0, 1]")

    @property
    def c1(self) -> float:
        return self.xi / (self.n - 1) + (1.0 - self.xi)

    @property
    def c2(self) -> float:
        return self.xi / (self.n - 1)


def build_star_to_complete(spec: StarCompleteSpec) -> DemandPattern:
    return validate_demand_pattern(spec.n, star_to_complete_alpha(spec.n, spec.xi), np.ones(spec.n))


@dataclass(frozen=True)
class ThresholdSet:
    k1: float
    k2: float
    k3: float
    k4: float
    beta_lim: float
    case_k3_ge_k1: bool

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "k4": self.k4,
                "beta_lim": self.beta_lim, "case_k3_ge_k1": self.case_k3_ge_k1}


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta = {beta!r} must lie in (0, 1)")


def beta_limit(n: int, beta: float) -> float:
    disc = (beta * beta * (n - 1) + 4 * beta - 4) / (n - 1)
    if disc < 0:
        return 0.0
    val = (n - 1) / (2 * (1 - beta) * beta * (n - 2)) * (beta * (1 - 2 * beta) + math.sqrt(disc))
    return max(val, 0.0)


def compute_thresholds(spec: StarCompleteSpec, beta: float) -> ThresholdSet:
    _check_beta(beta)
    n, xi, c1 = spec.n, spec.xi, spec.c1
    k1 = (1 + beta * c1) / (c1 + 1)
    blim = beta_limit(n, beta)
    upper = (beta * (n - 1) - 1) / (beta * (n - 2))
    if xi >= upper - SLACK:
        k2 = 1.0
    elif xi >= blim - SLACK:
        k2 = ((c1 * (1 + beta) + (n - 1) * beta ** 2 * c1 ** 3 + 1)
              / ((c1 + 1) * ((n - 1) * beta ** 2 * c1 ** 2 + 1)))
    else:
        k2 = k1
    k3 = ((n - 1) * c1 - 1) / ((1 - beta) * (n - 1) * (1 + c1) * c1)
    k4 = (((1 + beta) * c1 + (n - 1) * beta * c1 ** 3 + 1)
          / ((c1 + 1) * (beta * (n - 1) * c1 ** 2 + 1)))
    case = beta * c1 * (n - 1) * (1 - c1 + beta * c1) >= 1 - SLACK
    return ThresholdSet(k1, k2, k3, k4, blim, case)


def classify_regime(spec: StarCompleteSpec, beta: float, k: float) -> Regime:
    if k < 0:
        raise ValueError("k must be nonnegative")
    t = compute_thresholds(spec, beta)
    low = t.k1 if t.case_k3_ge_k1 else t.k4
    if k <= low + SLACK:
        return Regime.AV_ONLY
    if k < t.k2 - SLACK:
        return Regime.TRULY_MIXED
    return Regime.HV_ONLY


SWEEP_COLUMNS = ("k", "profit_mixed", "profit_forced_hv", "profit_forced_av",
                 "sum_x", "sum_z", "regime_numeric", "regime_analytic")


@dataclass(frozen=True)
class SweepRow:
    k: float
    profit_mixed: float
    profit_forced_hv: float
    profit_forced_av: float
    sum_x: float
    sum_z: float
    regime_numeric: Regime
    regime_analytic: Regime | None
    reports: tuple = ()

    def cells(self) -> list[str]:
        nums = (self.k, self.profit_mixed, self.profit_forced_hv, self.profit_forced_av,
                self.sum_x, self.sum_z)
        return [f"{v:.12g}" for v in nums] + [
            self.regime_numeric.value,
            self.regime_analytic.value if self.regime_analytic is not None else ""]


def k_grid(k_from: float, k_to: float, k_step: float) -> list[float]:
    """Inclusive grid; endpoints are reproduced exactly, interior points by index."""
    if not (k_step > 0 and 0 <= k_from < k_to):
        raise ValueError("need 0 <= k_from < k_to and k_step > 0")
    count = int(math.floor((k_to - k_from) / k_step + 1e-9))
    ks = [round(k_from + i * k_step, 12) for i in range(count + 1)]
    if k_to - ks[-1] > 1e-9 * max(1.0, k_to):
        ks.append(k_to)
    return ks


def sweep_point(pattern: DemandPattern, beta: float, omega: float, pbar: float, k: float,
                assignment: Assignment = Assignment.HV_PRIORITY,
                spec: StarCompleteSpec | None = None,
                settings: QpSettings = QpSettings(), keep_reports: bool = False) -> SweepRow:
    params = EconomicParams.from_k(beta, omega, k, pbar)
    mixed = solve_equilibrium(pattern, params, assignment, DeploymentMode.MIXED, settings)
    fhv = solve_equilibrium(pattern, params, assignment, DeploymentMode.FORCED_HV_ONLY, settings)
    fav = solve_equilibrium(pattern, params, assignment, DeploymentMode.FORCED_AV_ONLY, settings)
    s = mixed.solution
    return SweepRow(
        k, mixed.profit, fhv.profit, fav.profit, float(s.x.sum()), float(s.z.sum()),
        mixed.regime, classify_regime(spec, beta, k) if spec is not None else None,
        (mixed, fhv, fav) if keep_reports else ())


def sweep(pattern: DemandPattern, beta: float, omega: float, pbar: float, ks,
          assignment: Assignment = Assignment.HV_PRIORITY,
          spec: StarCompleteSpec | None = None, settings: QpSettings = QpSettings(),
          workers: int = 1, keep_reports: bool = False) -> list[SweepRow]:
    """One row per k, in the order given, whatever the completion order."""
    def one(k):
        return sweep_point(pattern, beta, omega, pbar, k, assignment, spec, settings,
                           keep_reports)
    if workers <= 1:
        return [one(k) for k in ks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, ks))


def write_sweep_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow(row.cells())


def regime_switches(rows) -> list[tuple[float, Regime, Regime]]:
    """(k, before, after) at every change of the numerical regime, k = midpoint."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if a.regime_numeric is not b.regime_numeric:
            out.append(((a.k + b.k) / 2, a.regime_numeric, b.regime_numeric))
    return out
