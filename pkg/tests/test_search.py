import numpy as np
import pytest

from bilevel_ambiguity.problem import EvaluationError
from bilevel_ambiguity.search import CachedObjective, lhs_sample, projected_nelder_mead


def test_quadratic_minimum_inside_box(case1):
    lset = case1.leader_set
    res = projected_nelder_mead(lambda x: float(((x - [0.3, 1.7]) ** 2).sum()), lset,
                                [lset.center()])
    np.testing.assert_allclose(res.x, [0.3, 1.7], atol=1e-6)
    assert res.status == "converged"
    assert res.runs[0].diameter <= 1e-6


def test_minimum_outside_is_projected(case1):
    lset = case1.leader_set
    res = projected_nelder_mead(lambda x: float(((x - [3.0, -1.0]) ** 2).sum()), lset,
                                [lset.center()])
    np.testing.assert_allclose(res.x, [2.0, 0.0], atol=1e-6)
    assert lset.contains(res.x, 0.0)


def test_polyhedral_leader_set(case2):
    lset = case2.leader_set
    seen = []

    def fun(x):
        seen.append(x.copy())
        return float(x[2] ** 2 + x.sum())

    res = projected_nelder_mead(fun, lset, [lset.center()], max_fevals=300)
    assert all(lset.contains(x, 1e-9) for x in seen)
    assert res.x.sum() == pytest.approx(5.0, abs=1e-4)


def test_budget_zero_returns_best_start(case1):
    lset = case1.leader_set
    starts = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]
    res = projected_nelder_mead(lambda x: float(abs(x[0] - 0.9)), lset, starts, max_fevals=0)
    assert res.best_run == 1 and res.status == "incumbent"
    assert res.nfev == 3


def test_ties_go_to_lowest_start(case1):
    lset = case1.leader_set
    res = projected_nelder_mead(lambda x: 1.0, lset, [[0.5, 0.5], [1.5, 1.5]], max_fevals=0)
    assert res.best_run == 0


def test_failed_evaluations_become_inf(case1):
    def fun(x):
        if x[0] > 1.0:
            raise EvaluationError("no")
        return float(x[0])

    obj = CachedObjective(fun, case1.leader_set)
    assert obj.value(np.array([1.5, 0.0])) == np.inf
    assert obj.value(np.array([0.5, 0.0])) == 0.5
    obj.value(np.array([0.5, 0.0]))
    assert obj.n_calls == 2


def test_projection_penalty(case1):
    obj = CachedObjective(lambda x: 1.0, case1.leader_set)
    # (2.5, 1) projects to (2, 1): value 1 + (1 + 1) * 0.25
    assert obj(np.array([2.5, 1.0])) == pytest.approx(1.5)


def test_no_starts_raises(case1):
    with pytest.raises(ValueError):
        projected_nelder_mead(lambda x: 0.0, case1.leader_set, [])


def test_lhs_deterministic_and_seeded(case1):
    a = lhs_sample(case1.leader_set, 10, seed=3)
    assert np.array_equal(a, lhs_sample(case1.leader_set, 10, seed=3))
    assert not np.array_equal(a, lhs_sample(case1.leader_set, 10, seed=4))
