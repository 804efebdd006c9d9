import numpy as np
import pytest
import scipy.sparse as sp

from tubedispatch import InfeasibleError, MiqpProblem, solve_miqp
from tubedispatch.miqp import ORACLE_MAX_BINARIES, enumerate_oracle, solve_or_raise
from tubedispatch.problem import BigMCoupling
from tubedispatch.qp import INFEASIBLE, OPTIMAL, kkt_residuals, solve_qp

from helpers import random_miqp, random_window_problem


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


@pytest.mark.parametrize("seed", range(40))
def test_generic_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    prob = random_miqp(rng, n=int(rng.integers(3, 8)), k=int(rng.integers(1, 4)))
    ref = enumerate_oracle(prob)
    rep = solve_miqp(prob, gap_tol=1e-9)
    if ref.status == INFEASIBLE:
        assert rep.status == INFEASIBLE
        return
    assert rep.status == OPTIMAL
    assert rel(rep.objective, ref.objective) <= 1e-6
    xb = rep.x[list(prob.binaries)]
    np.testing.assert_array_equal(xb, np.round(xb))


@pytest.mark.parametrize("seed", range(30))
def test_window_matches_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    prob = random_window_problem(rng)
    ref = enumerate_oracle(prob)
    rep = solve_miqp(prob, gap_tol=1e-9)
    if ref.status == INFEASIBLE:
        assert rep.status == INFEASIBLE
        return
    assert rel(rep.objective, ref.objective) <= 1e-6
    assert prob.max_violation(rep.x) <= 1e-6
    modes = {k: int(round(rep.x[k])) for k in prob.binaries}
    fixed = prob.fix_binaries(modes)
    sol = solve_qp(fixed)
    assert max(kkt_residuals(fixed, sol).values()) <= 1e-6


def test_gap_is_respected():
    rng = np.random.default_rng(5)
    prob = random_window_problem(rng, max_len=4)
    rep = solve_miqp(prob, gap_tol=1e-3)
    ref = enumerate_oracle(prob)
    assert rep.gap <= 1e-3
    assert rep.objective <= ref.objective + 1e-3 * max(1, abs(ref.objective)) + 1e-9
    assert rep.best_bound <= ref.objective + 1e-9


def _toy(lb_x=0.0):
    # x continuous, b binary; x <= 5 b, x >= lb_x, minimise (x - 3)^2 + b
    P = sp.csc_matrix(np.diag([2.0, 0.0]))
    q = np.array([-6.0, 1.0])
    A_in = sp.csr_matrix([[1.0, -5.0], [-1.0, 0.0]])
    b_in = np.array([0.0, -lb_x])
    return MiqpProblem(P, q, sp.csr_matrix((0, 2)), np.zeros(0), A_in, b_in, np.array([0.0, 0.0]),
                       np.array([10.0, 1.0]), binaries=(1,), couplings=(BigMCoupling(1, (0,), 5.0, 1),),
                       constant=9.0)


def test_toy_by_hand():
    rep = solve_miqp(_toy())
    # b = 1 allows x = 3 with cost 1; b = 0 forces x = 0 with cost 9
    assert rep.x[1] == 1.0
    assert rep.x[0] == pytest.approx(3.0, abs=1e-6)
    assert rep.objective == pytest.approx(1.0, abs=1e-6)


def test_infeasible_raises_with_certificate():
    prob = _toy(lb_x=6.0)
    rep = solve_miqp(prob)
    assert rep.status == INFEASIBLE
    with pytest.raises(InfeasibleError) as err:
        solve_or_raise(prob, "toy", slot=7)
    assert err.value.slot == 7 and err.value.stage == "toy"


def test_node_limit_keeps_incumbent_or_reports():
    rng = np.random.default_rng(3)
    prob = random_window_problem(rng, max_len=6)
    rep = solve_miqp(prob, node_limit=1)
    assert rep.status in (OPTIMAL, "node-limit")
    if rep.incumbent is not None:
        assert prob.max_violation(rep.x) <= 1e-6
        assert rep.best_bound <= rep.objective + 1e-9


def test_enumeration_guard():
    rng = np.random.default_rng(0)
    prob = random_miqp(rng, n=ORACLE_MAX_BINARIES + 2, k=ORACLE_MAX_BINARIES + 1)
    with pytest.raises(ValueError):
        enumerate_oracle(prob)


def test_deterministic():
    prob = random_window_problem(np.random.default_rng(11), max_len=4)
    a, b = solve_miqp(prob), solve_miqp(prob)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.nodes == b.nodes
