import csv

import numpy as np
import pytest

from bilevel_ambiguity.diagnostics import fb_stationarity_residual, ll_residual
from bilevel_ambiguity.lower import solve_eps_extremum, solve_lower
from bilevel_ambiguity.optimistic import (ProximalState, multistart_optimistic,
                                          proximal_subproblem, run_optimistic)
from bilevel_ambiguity.pessimistic import toy_instance
from bilevel_ambiguity.problem import InfeasiblePointError


@pytest.fixture(scope="module")
def case1_run(case1):
    return run_optimistic(case1, 0.1, [1.0, 1.0], max_iter=600)


def test_subproblem_fixed_point():
    # toy optimum: x = 0.5, y = x - sqrt(eps) = 0
    inst = toy_instance()
    x, y = np.array([0.5]), np.array([0.0])
    state = ProximalState(x, y, x.copy(), 0.0, 2.0, 0, 0.0)
    xn, yn, lam = proximal_subproblem(inst, state, 0.25)
    assert np.linalg.norm(np.concatenate([xn - x, yn - y])) <= 1e-6
    assert lam == pytest.approx(1.0, abs=1e-4)


def test_subproblem_large_tau_freezes(case1):
    x = np.array([1.0, 1.0])
    low = solve_lower(case1, x)
    y = solve_eps_extremum(case1, x, 0.1, "min", low).y
    state = ProximalState(x, y, low.y_star, 0.0, 1e8, 0, low.phi)
    xn, yn, _ = proximal_subproblem(case1, state, 0.1)
    assert np.linalg.norm(np.concatenate([xn - x, yn - y])) <= 1e-6


def test_case2_subproblem_descent(case2):
    rep = run_optimistic(case2, 0.5, case2.leader_set.center(), max_iter=25)
    checked = [r for r in rep.trace if r["start_feasible"]]
    assert checked
    for row in checked:
        assert row["sub_after"] <= row["sub_before"] + 1e-9


def test_case1_run_from_symmetric(case1_run):
    rep = case1_run
    assert rep.status == "converged"
    assert rep.r_ll <= 1e-6
    assert rep.F <= 0.425 + 1e-9
    assert max(rep.step, rep.r_ll, rep.g_stat) <= 1e-6


def test_case1_converged_point_reverifies(case1, case1_run):
    rep = case1_run
    low = solve_lower(case1, rep.x)
    assert ll_residual(case1, rep.x, rep.y, 0.1, low.phi) <= 1e-6
    assert fb_stationarity_residual(case1, rep.x, rep.y, low.y_star, rep.lam, 0.1) <= 1e-6


def test_case1_restart_stability(case1, case1_run):
    rep = run_optimistic(case1, 0.1, case1_run.x, y0=case1_run.y)
    assert rep.status == "converged" and rep.iterations <= 2
    assert rep.step <= 1e-6


def test_iteration_cap_gives_incumbent(case1):
    rep = run_optimistic(case1, 0.1, [1.0, 1.0], max_iter=3)
    assert rep.status == "incumbent" and rep.iterations == 3


def test_case2_multistart_band(case2):
    reports = multistart_optimistic(case2, 0.5, n_starts=8)
    values = [solve_eps_extremum(case2, r.x, 0.5, "min").value for r in reports]
    assert min(values) <= 0.70


def test_trace_csv(tmp_path, case1):
    rep = run_optimistic(case1, 0.1, [1.0, 1.0], max_iter=4)
    path = tmp_path / "trace.csv"
    rep.write_trace(path)
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["iter", "step", "r_ll", "g_stat", "F"]
    assert len(rows) == 4


def test_bad_inputs(case1):
    with pytest.raises(InfeasiblePointError):
        run_optimistic(case1, 0.1, [3.0, 0.0])
    with pytest.raises(ValueError):
        run_optimistic(case1, 0.1, [1.0, 1.0], tau=0.0)
