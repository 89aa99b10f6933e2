import io

import numpy as np
import pytest
import scipy.sparse as sp

from mixauto.qp import (
    QpError,
    QpProblem,
    QpSettings,
    Status,
    dual_objective,
    dump_problem,
    kkt_residuals,
    solve_qp,
)
from oracles import cvxpy_qp, random_qp


def test_scalar_revenue():
    # max 0.8 d - d^2 on [0, 1]
    prob = QpProblem([-1.0, 0.0], [0.8, 0.0], sp.csr_matrix([[1.0, -1.0]]), [0.0],
                     [0.0, 0.0], [1.0, np.inf])
    res = solve_qp(prob)
    assert res.status is Status.OPTIMAL
    assert res.primal[0] == pytest.approx(0.4, abs=1e-9)
    assert res.objective == pytest.approx(0.16, abs=1e-12)


def test_equality_dual_sign():
    # max v - v^2 s.t. v = 2: grad = -3, so lam = 3
    prob = QpProblem([-1.0], [1.0], sp.csr_matrix([[1.0]]), [2.0], [-np.inf])
    res = solve_qp(prob)
    assert res.primal[0] == pytest.approx(2.0, abs=1e-9)
    assert res.duals_eq[0] == pytest.approx(3.0, abs=1e-8)
    assert res.objective == pytest.approx(-2.0, abs=1e-9)


def test_bound_dual_signs():
    # max -v^2 - v on v >= 0: lower bound active with mu > 0
    lo = QpProblem([-1.0, -1.0], [-1.0, 0.0], sp.csr_matrix([[0.0, 1.0]]), [0.5], [0.0, 0.0])
    res = solve_qp(lo)
    assert res.primal[0] == pytest.approx(0.0, abs=1e-9)
    assert res.duals_bound[0] == pytest.approx(1.0, abs=1e-8)
    # max -v^2 + 3v on v <= 1: upper bound active with mu < 0
    up = QpProblem([-1.0, -1.0], [3.0, 0.0], sp.csr_matrix([[0.0, 1.0]]), [0.5],
                   [0.0, 0.0], [1.0, np.inf])
    res = solve_qp(up)
    assert res.primal[0] == pytest.approx(1.0, abs=1e-9)
    assert res.duals_bound[0] == pytest.approx(-1.0, abs=1e-8)


def test_infeasible_detected():
    prob = QpProblem([-1.0, -1.0], [0.0, 0.0], sp.csr_matrix([[1.0, 1.0]]), [-1.0], [0.0, 0.0])
    assert solve_qp(prob).status is Status.INFEASIBLE


def test_iteration_cap_reported():
    rng = np.random.default_rng(5)
    prob = random_qp(rng)
    res = solve_qp(prob, QpSettings(max_iter=10, polish=False, eps_primal=1e-14, eps_dual=1e-14))
    assert res.status is Status.MAX_ITERATIONS
    assert res.iterations == 10


@pytest.mark.parametrize("bad", [
    dict(quad=[1.0]),
    dict(lower=[1.0], upper=[0.0]),
    dict(a=np.zeros((1, 1))),
])
def test_invalid_problems_rejected(bad):
    args = dict(quad=[-1.0], lin=[0.0], a=np.ones((1, 1)), b=[0.0], lower=[0.0], upper=[1.0])
    args.update(bad)
    with pytest.raises(QpError):
        QpProblem(args["quad"], args["lin"], sp.csr_matrix(args["a"]), args["b"],
                  args["lower"], args["upper"])


@pytest.mark.parametrize("seed", range(25))
def test_matches_cvxpy(seed):
    prob = random_qp(np.random.default_rng(1000 + seed))
    res = solve_qp(prob)
    _, ref = cvxpy_qp(prob)
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))
    p, d = kkt_residuals(prob, res.primal, res.duals_eq, res.duals_bound)
    assert p < 1e-7 and d < 1e-7
    gap = res.objective - dual_objective(prob, res.duals_eq, res.duals_bound)
    assert abs(gap) <= 1e-6 * (1 + abs(res.objective))


def test_dump_lists_every_nonzero():
    prob = random_qp(np.random.default_rng(3), max_m=5)
    buf = io.StringIO()
    dump_problem(prob, buf)
    lines = buf.getvalue().splitlines()
    m, k, nnz = map(int, lines[1].split())
    assert (m, k, nnz) == (prob.m, prob.k, prob.a_eq.nnz)
