import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_ambiguity.cases import golden_table1
from bilevel_ambiguity.diagnostics import StatusLabel
from bilevel_ambiguity.frontier import (FrontierPoint, SweepConfig, build_frontier,
                                        dominance_mask, evaluate_point, lhs_sample,
                                        pareto_filter, scalarized_solve)


def brute_force_dominated(pts):
    out = []
    for i, (u, d) in enumerate(pts):
        out.append(any(u2 <= u and d2 <= d and (u2 < u or d2 < d)
                       for j, (u2, d2) in enumerate(pts) if j != i))
    return np.array(out)


def make_point(u, d, source="sweep"):
    return FrontierPoint(x=np.zeros(2), psi_o=u, psi_p=u + d, delta=d, rho=0.0,
                         status=StatusLabel.HEURISTIC if source != "sweep"
                         else StatusLabel.CONVERGED, source=source)


@pytest.fixture(scope="module")
def small_report(case1):
    return build_frontier(case1, 0.1, SweepConfig(J=3, n_lhs=12, n_starts=3),
                          heuristics=[[0.0, 0.0], [1.0, 1.0]],
                          heuristic_labels=["no toll", "symmetric"])


def test_lhs_single_point_deterministic(case1):
    a = lhs_sample(case1.leader_set, 1, seed=7)
    b = lhs_sample(case1.leader_set, 1, seed=7)
    assert a.shape == (1, 2) and np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 2))


def test_lhs_strata(case1):
    pts = lhs_sample(case1.leader_set, 80, seed=7)
    for j in range(2):
        assert sorted(np.floor(pts[:, j] / 2 * 80).astype(int)) == list(range(80))


def test_lhs_case2_feasible(case2):
    pts = lhs_sample(case2.leader_set, 80, seed=7)
    s = pts.sum(1)
    assert np.all(s >= 5 - 1e-9)
    assert np.all(pts <= 0.6 * s[:, None] + 1e-9)
    assert np.all(pts >= case2.leader_set.lo - 1e-12)


def test_lhs_rejects_empty(case1):
    with pytest.raises(ValueError):
        lhs_sample(case1.leader_set, 0)


def test_pareto_pairs():
    a, b = make_point(1, 1), make_point(2, 2)
    pareto_filter([a, b])
    assert not a.dominated and b.dominated
    c, d = make_point(1, 2), make_point(2, 1)
    pareto_filter([c, d])
    assert not c.dominated and not d.dominated


def test_table1_sweep_rows_nondominated():
    rows = [r for r in golden_table1() if r["label"].startswith("omega")]
    pts = [make_point(float(r["psi_o"]), float(r["delta"])) for r in rows]
    pareto_filter(pts)
    assert not any(p.dominated for p in pts)
    assert np.all(np.diff([p.psi_o for p in pts]) > 0)
    assert np.all(np.diff([p.delta for p in pts]) < 0)


def test_pareto_relabels_samples_only():
    pts = [make_point(1, 1), make_point(0.5, 2, "lhs"), make_point(3, 3, "heuristic")]
    pareto_filter(pts)
    assert pts[0].status == StatusLabel.CONVERGED
    assert pts[1].status == StatusLabel.EMPIRICAL_PARETO
    assert pts[2].status == StatusLabel.HEURISTIC and pts[2].dominated


def test_pareto_matches_brute_force_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = rng.integers(1, 40)
        # coarse grid values force ties and duplicates
        pts = rng.integers(0, 6, (n, 2)).astype(float) / 5
        mask = dominance_mask(pts[:, 0], pts[:, 1], tol=0.0)
        np.testing.assert_array_equal(mask, brute_force_dominated(pts.tolist()))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=30))
def test_pareto_filter_property(pairs):
    pts = [make_point(u, d) for u, d in pairs]
    pareto_filter(pts, tol=0.0)
    assert [p.dominated for p in pts] == brute_force_dominated(pairs).tolist()


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(J=1)
    np.testing.assert_allclose(SweepConfig(J=5).weights, [0, 0.25, 0.5, 0.75, 1])


def test_scalarized_omega_range(case1):
    with pytest.raises(ValueError):
        scalarized_solve(case1, 0.1, 1.5)


def test_scalarized_nominal_endpoint(case1):
    pt = scalarized_solve(case1, 0.1, 0.0, SweepConfig(n_starts=3))
    # ledger: the exact nominal argmin is near (1.52, 1.48), below the tabulated 0.382
    assert pt.psi_o <= 0.382 + 1e-3
    assert np.linalg.norm(pt.x - [1.6, 1.4]) < 0.15
    assert pt.status == StatusLabel.CONVERGED
    assert pt.manifest["search"]["nfev"] > 0


def test_two_weight_sweep_is_endpoints(case1):
    rep = build_frontier(case1, 0.1, SweepConfig(J=2, n_lhs=0, n_starts=3))
    assert [p.source for p in rep.points] == ["sweep", "sweep"]
    assert [p.weight for p in rep.points] == [0.0, 1.0]
    robust = rep.points[1]
    np.testing.assert_allclose(robust.x, [2.0, 0.0], atol=1e-4)
    assert robust.delta == pytest.approx(0.137, abs=1e-3)
    assert robust.status == StatusLabel.CONVERGED


def test_small_report_invariants(small_report):
    rep = small_report
    assert [p.source for p in rep.points] == ["sweep"] * 3 + ["lhs"] * 12 + ["heuristic"] * 2
    u = np.array([p.psi_o for p in rep.points])
    d = np.array([p.delta for p in rep.points])
    np.testing.assert_array_equal([p.dominated for p in rep.points],
                                  brute_force_dominated(list(zip(u, d))))
    for p in rep.by_source("sweep"):
        if p.status == StatusLabel.CONVERGED:
            # supported points: nothing in the report beats them by more than 1e-6
            assert not np.any((u <= p.psi_o - 1e-6) & (d <= p.delta - 1e-6))
    for p in rep.by_source("lhs") + rep.by_source("heuristic"):
        expected = StatusLabel.HEURISTIC if p.dominated else StatusLabel.EMPIRICAL_PARETO
        assert p.status == expected
        assert p.record is not None


def test_heuristic_rows_match_table(small_report):
    h = {p.label: p for p in small_report.by_source("heuristic")}
    assert h["no toll"].rho == pytest.approx(0.538, abs=1e-3)
    assert h["symmetric"].psi_o == pytest.approx(0.425, abs=1e-3)


def test_report_serialization(small_report, tmp_path):
    rep = small_report
    text = rep.to_csv()
    header = text.splitlines()[0]
    assert header == ("source,weight,x1,x2,psi_o,psi_p,delta,rho,r_ll,ni_gap,status,dominated")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == len(rep.points)
    assert rows[0]["weight"] == "0" and rows[-1]["weight"] == ""
    data = json.loads(rep.to_json())
    assert data["points"][0]["manifest"]["search"]["runs"]
    assert data["sweep"]["J"] == 3
    blocks = rep.plotdata().split("\n\n\n")
    assert blocks[0].startswith("# sweep") and len(blocks[0].splitlines()) == 4
    files = rep.write(tmp_path)
    assert all((tmp_path / f).exists() for f in files)
    assert "plotdata_frontier.dat" in (tmp_path / "plot_frontier.gp").read_text()


def test_gas_heavy_dominates_nominal_incumbent(case2):
    gas = evaluate_point(case2, [0.79, 0.79, 3.12, 0.50], 0.5, "heuristic", label="gas-heavy")
    nominal = evaluate_point(case2, [1.09, 0.35, 2.58, 0.98], 0.5, "external", label="nominal")
    assert gas.psi_o == pytest.approx(0.596, abs=0.02)
    assert gas.delta == pytest.approx(0.922, abs=0.02)
    pareto_filter([gas, nominal])
    assert gas.status == StatusLabel.EMPIRICAL_PARETO
    assert nominal.dominated


def test_infeasible_heuristic_projected(case2):
    rep = build_frontier(case2, 0.5, SweepConfig(J=2, n_lhs=0, n_starts=1, max_fevals=0),
                         heuristics=[[0.1, 0.1, 0.1, 0.1]])
    h = rep.by_source("heuristic")[0]
    assert h.manifest["projected"] is True
    assert case2.leader_set.contains(h.x, 1e-9)
