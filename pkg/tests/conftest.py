import numpy as np
import pytest

from bilevel_ambiguity.cases import Case1Params, Case2Params, case1_instance, case2_instance


@pytest.fixture(scope="session")
def case1():
    return case1_instance()


@pytest.fixture(scope="session")
def case2():
    return case2_instance()


@pytest.fixture(scope="session")
def params1():
    return Case1Params.load()


@pytest.fixture(scope="session")
def params2():
    return Case2Params.load()


def random_leader_points(lset, n, seed):
    rng = np.random.default_rng(seed)
    pts = lset.lo + rng.random((n, lset.dim)) * (lset.hi - lset.lo)
    return np.array([lset.project(p) for p in pts])
