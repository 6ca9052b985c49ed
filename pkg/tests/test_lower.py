import numpy as np
import pytest

from bilevel_ambiguity.cases import case1_analytic_diagnostics
from bilevel_ambiguity.lower import solve_eps_extremum, solve_lower
from bilevel_ambiguity.pessimistic import toy_instance

from conftest import random_leader_points

EPS_GRID = [0.0, 0.05, 0.1, 0.5, 1.0]


def test_lower_case1_origin(case1):
    low = solve_lower(case1, np.array([0.0, 0.0]))
    assert low.phi == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(low.y_star, [1.0, 0.0], atol=1e-10)
    assert low.status == "converged" and low.kkt_residual <= 1e-8


def test_lower_case1_indifference_line(case1):
    x = np.array([1.6, 1.4])
    low = solve_lower(case1, x)
    assert low.phi == pytest.approx(2.6, abs=1e-12)
    assert case1.f(x, low.y_star) == low.phi
    assert case1.follower_set.contains(low.y_star, 1e-10)


def test_lower_case2_oracle(case2):
    low = solve_lower(case2, np.array([1.08, 0.72, 3.79, 1.08]))
    np.testing.assert_allclose(low.y_star, [0.38429, 0.39074, 3.65314, 0.39392], atol=1e-5)
    assert low.status == "converged"


def test_lower_solution_invariants(case2):
    for x in random_leader_points(case2.leader_set, 10, seed=2):
        low = solve_lower(case2, x)
        assert case2.f(x, low.y_star) == low.phi
        assert case2.follower_set.contains(low.y_star, 1e-10)
        if low.status == "converged":
            assert low.kkt_residual <= 1e-8


def test_eps_min_case1_origin(case1):
    ext = solve_eps_extremum(case1, np.array([0.0, 0.0]), 0.1, "min")
    assert ext.value == pytest.approx(0.625, abs=1e-8)
    np.testing.assert_allclose(ext.y, [0.5, 0.5], atol=1e-6)
    assert ext.feasibility_slack >= -1e-8


def test_eps_max_case1_origin(case1):
    ext = solve_eps_extremum(case1, np.array([0.0, 0.0]), 0.1, "max")
    assert ext.value == pytest.approx(1.5, abs=1e-8)
    np.testing.assert_allclose(ext.y, [1.0, 0.0], atol=1e-6)


def test_eps_large_is_unconstrained():
    # f(x, y) = (y - x)^2 on [-4, 4]: eps = 100 covers Y, F = (x - 1)^2 + y
    inst = toy_instance()
    x = np.array([0.3])
    lo = solve_eps_extremum(inst, x, 100.0, "min")
    hi = solve_eps_extremum(inst, x, 100.0, "max")
    assert lo.value == pytest.approx(0.49 - 4.0, abs=1e-8)
    assert hi.value == pytest.approx(0.49 + 4.0, abs=1e-8)


def test_eps_negative_rejected(case1):
    with pytest.raises(ValueError):
        solve_eps_extremum(case1, np.array([0.0, 0.0]), -0.1, "min")


@pytest.mark.parametrize("name", ["case1", "case2"])
def test_monotone_in_eps(request, name):
    inst = request.getfixturevalue(name)
    for x in random_leader_points(inst.leader_set, 20, seed=11):
        low = solve_lower(inst, x)
        lo = [solve_eps_extremum(inst, x, e, "min", low, kkt=False).value for e in EPS_GRID]
        hi = [solve_eps_extremum(inst, x, e, "max", low, kkt=False).value for e in EPS_GRID]
        assert np.all(np.diff(lo) <= 1e-6)
        assert np.all(np.diff(hi) >= -1e-6)
        assert np.all(np.array(hi) >= np.array(lo) - 1e-9)


def test_extrema_match_case1_closed_form(case1, params1):
    for x in random_leader_points(case1.leader_set, 50, seed=3):
        low = solve_lower(case1, x)
        ref = case1_analytic_diagnostics(params1, x, 0.1)
        lo = solve_eps_extremum(case1, x, 0.1, "min", low)
        hi = solve_eps_extremum(case1, x, 0.1, "max", low)
        assert lo.value == pytest.approx(ref.psi_o, abs=1e-6)
        assert hi.value == pytest.approx(ref.psi_p, abs=1e-6)
        assert lo.status == hi.status == "converged"


def test_eps_zero_singleton_shortcut(case2):
    x = np.array([1.08, 0.72, 3.79, 1.08])
    low = solve_lower(case2, x)
    lo = solve_eps_extremum(case2, x, 0.0, "min", low)
    hi = solve_eps_extremum(case2, x, 0.0, "max", low)
    assert lo.value == hi.value == pytest.approx(case2.F(x, low.y_star), abs=0)
    assert lo.status == "converged"
    # tiny positive eps takes the level-set route and stays close
    assert solve_eps_extremum(case2, x, 1e-10, "max", low).value == pytest.approx(hi.value,
                                                                                 abs=1e-4)
