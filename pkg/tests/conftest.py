import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixauto.model import EconomicParams, validate_demand_pattern  # noqa: E402
from mixauto.star import StarCompleteSpec, build_star_to_complete  # noqa: E402


def random_pattern(rng, n):
    """Dense random routing: uniform weights, zero diagonal, rows normalized."""
    a = rng.random((n, n))
    np.fill_diagonal(a, 0.0)
    a /= a.sum(axis=1, keepdims=True)
    return validate_demand_pattern(n, a, rng.uniform(0.5, 2.0, n))


def sparse_pattern(rng, n):
    """About 60% of arcs present; redrawn until strongly connected."""
    while True:
        a = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(a, 0.0)
        if (a.sum(axis=1) == 0).any():
            continue
        a /= a.sum(axis=1, keepdims=True)
        try:
            return validate_demand_pattern(n, a, rng.uniform(0.5, 2.0, n))
        except ValueError:
            pass


def random_scenario(rng, pattern_fn=random_pattern):
    n = int(rng.integers(3, 9))
    pattern = pattern_fn(rng, n)
    params = EconomicParams.from_k(rng.uniform(0.5, 0.95), 1.0, rng.uniform(0.3, 1.1), 1.0)
    return pattern, params


def complete(n):
    a = (np.ones((n, n)) - np.eye(n)) / (n - 1)
    return validate_demand_pattern(n, a, np.ones(n))


@pytest.fixture
def star02():
    spec = StarCompleteSpec(3, 0.2)
    return spec, build_star_to_complete(spec)
