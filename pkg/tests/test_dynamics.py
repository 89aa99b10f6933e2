import io

import numpy as np
import pytest

from mixauto.dynamics import (
    FleetState,
    RelocationPolicy,
    fixed_point_residual,
    induced_policy,
    iterate_to_fixed_point,
    step,
)
from mixauto.equilibrium import solve_equilibrium
from mixauto.model import Assignment, EconomicParams, validate_demand_pattern
from conftest import complete, random_scenario

HV, AV, W = Assignment.HV_PRIORITY, Assignment.AV_PRIORITY, Assignment.WEIGHTED
CYCLE = validate_demand_pattern(2, [[0, 1], [1, 0]], [2.0, 2.0])
PAR = EconomicParams(0.8, 1.0, 0.1, 1.0)


def test_policy_validation():
    with pytest.raises(ValueError):
        RelocationPolicy([[0.5, 0.4], [0, 1]], [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        RelocationPolicy([[1.5, -0.5], [0, 1]], [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        FleetState([-1.0], [0.0])
    pol = RelocationPolicy.uniform(3)
    assert pol.y_weights[0].tolist() == [0.0, 0.5, 0.5]


def test_weighted_step_on_cycle():
    # d = 1 at both (p = 0.5, theta = 2); each class serves half its riders
    state = FleetState([1.0, 1.0], [1.0, 1.0])
    pol = RelocationPolicy([[0, 1], [1, 0]], [[0, 1], [1, 0]])
    nxt = step(state, [0.5, 0.5], [0.0, 0.0], pol, CYCLE, PAR, W)
    assert nxt.z.tolist() == [1.0, 1.0]
    assert nxt.x == pytest.approx([0.8, 0.8])


def test_drivers_exit_without_entry():
    rng = np.random.default_rng(3)
    pat, par = random_scenario(rng)
    state = FleetState(rng.random(pat.n), np.zeros(pat.n))
    pol = RelocationPolicy.uniform(pat.n)
    p = rng.uniform(0, 1, pat.n)
    for _ in range(5):
        nxt = step(state, p, np.zeros(pat.n), pol, pat, par, HV)
        assert nxt.x.sum() == pytest.approx(par.beta * state.x.sum(), rel=1e-12)
        state = nxt


def test_idle_avs_reach_stationary_distribution():
    rng = np.random.default_rng(4)
    pat, par = random_scenario(rng)
    pol = RelocationPolicy.uniform(pat.n)
    w = rng.random((pat.n, pat.n))
    np.fill_diagonal(w, 0)
    pol = RelocationPolicy(pol.y_weights, w / w.sum(1, keepdims=True))
    start = FleetState(np.zeros(pat.n), rng.random(pat.n))
    traj = iterate_to_fixed_point(start, np.full(pat.n, par.pbar), np.zeros(pat.n), pol, pat,
                                  par, HV, max_steps=5000, tol=1e-14)
    assert traj.converged
    vals, vecs = np.linalg.eig(pol.r_weights.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    pi = pi / pi.sum() * start.z.sum()
    assert traj.final.z == pytest.approx(pi, abs=1e-10)


@pytest.mark.parametrize("asg", list(Assignment))
def test_equilibrium_is_fixed_point(asg):
    pat, par = random_scenario(np.random.default_rng(5))
    s = solve_equilibrium(pat, par, asg).solution
    assert fixed_point_residual(s, pat, par, asg) < 1e-9
    traj = iterate_to_fixed_point(FleetState(s.x, s.z), s.p, s.delta, induced_policy(s), pat,
                                  par, asg, max_steps=10, tol=1e-9)
    assert traj.converged and traj.steps <= 2


def test_hv_total_contracts_at_rate_beta():
    pat, par = random_scenario(np.random.default_rng(6))
    s = solve_equilibrium(pat, par, HV).solution
    traj = iterate_to_fixed_point(FleetState(1.1 * s.x, s.z), s.p, s.delta, induced_policy(s),
                                  pat, par, HV, max_steps=200, tol=1e-13)
    target = s.x.sum()
    gaps = [abs(row[1] - target) for row in traj.rows[:30]]
    for t, g in enumerate(gaps):
        assert g == pytest.approx(par.beta ** t * 0.1 * target, abs=1e-12)


def test_trajectory_csv():
    pat = complete(3)
    pol = RelocationPolicy.uniform(3)
    traj = iterate_to_fixed_point(FleetState([1, 0, 0], [0, 1, 0]), [0.5] * 3, [0.1] * 3, pol,
                                  pat, PAR, AV, max_steps=3, tol=1e-30, keep_states=True)
    assert not traj.converged and traj.steps == 3
    buf = io.StringIO()
    traj.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,sum_x,sum_z,max_state_delta"
    assert len(lines) == 5
    buf = io.StringIO()
    traj.write_csv(buf, wide=True)
    assert buf.getvalue().splitlines()[0].endswith("x0,x1,x2,z0,z1,z2")
    state, converged, steps = traj
    assert steps == 3


def test_bad_tolerance():
    with pytest.raises(ValueError):
        iterate_to_fixed_point(FleetState([1, 0], [0, 1]), [0, 0], [0, 0],
                               RelocationPolicy.uniform(2), CYCLE, PAR, HV, tol=0.0)
