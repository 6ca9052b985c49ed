import numpy as np
import pytest

from bilevel_ambiguity.cases import case1_analytic_diagnostics
from bilevel_ambiguity.lower import solve_eps_extremum, solve_lower
from bilevel_ambiguity.pessimistic import (direct_pessimistic_eval, ni_gap, ni_penalized_eval,
                                           outer_pessimistic_search, toy_instance)
from bilevel_ambiguity.problem import InfeasiblePointError

from conftest import random_leader_points

ROBUST = np.array([1.06, 1.09, 4.99, 1.17])


def test_ni_gap_worked_example(case1):
    gap = ni_gap(case1, [0.0, 0.0], [0.5, 0.5], [1.0, 0.0], 0.1)
    assert gap == pytest.approx(0.875, abs=1e-8)


def test_ni_gap_zero_at_lower_equilibrium(case1):
    assert ni_gap(case1, [0.0, 0.0], [1.0, 0.0], [1.0, 0.0], 0.1) <= 1e-10


def test_ni_gap_suboptimal_follower(case1):
    # v = (0.9, 0.1) costs 0.02 more than phi = 1; y = (1, 0) maximizes F on the level set
    v = np.array([0.9, 0.1])
    gap = ni_gap(case1, [0.0, 0.0], [1.0, 0.0], v, 0.1)
    assert gap == pytest.approx(0.02, abs=1e-10)


def test_ni_gap_rejects_coupling_infeasible(case1):
    with pytest.raises(InfeasiblePointError):
        ni_gap(case1, [0.0, 0.0], [0.0, 1.0], [1.0, 0.0], 0.1)


def test_ni_penalized_case1_on_line(case1):
    ev = ni_penalized_eval(case1, [1.6, 1.4], 0.1)
    assert ev.psi_p == pytest.approx(1.246, abs=1e-6)
    assert ev.ni_gap <= 1e-6 and ev.status == "converged"
    assert ev.ni_gap >= -1e-10


def test_ni_penalized_case2_robust_incumbent(case2):
    ev = ni_penalized_eval(case2, ROBUST, 0.5, n_starts=8)
    psi_o = solve_eps_extremum(case2, ROBUST, 0.5, "min").value
    assert ev.psi_p - psi_o == pytest.approx(0.370, abs=0.02)
    assert ev.status == "converged"


def test_ni_penalized_strongly_convex_eps_zero():
    inst = toy_instance()
    x = np.array([0.3])
    ev = ni_penalized_eval(inst, x, 0.0, n_starts=3)
    y_star = solve_lower(inst, x).y_star
    assert ev.ni_gap <= 1e-6
    # any y with f(y) - phi <= gap_tol passes the certificate, so |y - y*| <= sqrt(gap_tol)
    # and F (slope 1 in y) can sit up to 1e-3 above F(x, y*); never below the singleton value
    assert inst.F(x, y_star) - 1e-9 <= ev.psi_p <= inst.F(x, y_star) + np.sqrt(1e-6)
    assert abs(ev.y[0] - y_star[0]) <= np.sqrt(1e-6) + 1e-9


def _chain_checks(ev):
    for run in ev.trace:
        gaps = [s["gap"] for s in run["sigma_chain"]]
        assert all(g >= 0 for g in gaps)
        assert np.all(np.diff(gaps) <= 0)
        assert run["final_gap"] >= 0


@pytest.mark.parametrize("name, eps", [("case1", 0.1), ("case2", 0.5)])
def test_sigma_chain_monotone_and_gap_nonnegative(request, name, eps):
    inst = request.getfixturevalue(name)
    for x in random_leader_points(inst.leader_set, 10, seed=31):
        _chain_checks(ni_penalized_eval(inst, x, eps, n_starts=2))


def test_pessimistic_routes_sandwich(case1, params1):
    for x in random_leader_points(case1.leader_set, 20, seed=41):
        ev = ni_penalized_eval(case1, x, 0.1, n_starts=3)
        direct = direct_pessimistic_eval(case1, x, 0.1)
        ref = case1_analytic_diagnostics(params1, x, 0.1)
        F = case1.F(x, ev.y)
        assert ref.psi_o - 1e-6 <= F <= direct.psi_p + 1e-6
        assert ev.psi_p == pytest.approx(direct.psi_p, abs=1e-4)


def test_outer_search_toy_minimizer():
    x, ev = outer_pessimistic_search(toy_instance(), 0.25, n_starts=3)
    assert x[0] == pytest.approx(0.5, abs=1e-4)
    assert ev.psi_p == pytest.approx(0.25 + 0.5 + 0.5, abs=1e-6)
    assert ev.status == "converged"
    assert len(ev.search["runs"]) == 3


def test_outer_search_budget_zero():
    inst = toy_instance()
    x, ev = outer_pessimistic_search(inst, 0.25, n_starts=3, max_fevals=0)
    assert ev.status == "incumbent"
    starts = [r["x0"] for r in ev.search["runs"]]
    vals = [(s[0] - 1) ** 2 + s[0] + 0.5 for s in starts]
    assert x[0] == pytest.approx(starts[int(np.argmin(vals))][0])


def test_outer_search_case2_share_cap(case2):
    x, ev = outer_pessimistic_search(case2, 0.5, n_starts=8, certify="direct")
    share = x[2] / x.sum()
    assert 0.58 <= share <= 0.60 + 1e-8
    # no worse than the tabulated robust incumbent
    assert ev.psi_p <= direct_pessimistic_eval(case2, ROBUST, 0.5).psi_p + 1e-6
    assert {"start_index", "x0", "status"} <= set(ev.search["runs"][0])
