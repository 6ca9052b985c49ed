"""Robustness-efficiency frontier in the ``(psi_o, delta)`` plane.

A weighted-sum sweep ``(1 - w) psi_o + w delta`` over ``w_j = j / (J - 1)``
recovers supported nondominated points; a Latin-hypercube fill and
user-supplied heuristic decisions cover the rest. Every point carries its
diagnostic record and a provenance label.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ToleranceConfig, resolve
from .diagnostics import (DiagnosticRecord, StatusLabel, ambiguity_premium, format_sig,
                          normalized_ratio)
from .lower import solve_eps_extremum, solve_lower
from .pessimistic import ni_penalized_eval
from .problem import BilevelInstance, EvaluationError, SolverFailure
from .search import CachedObjective, lhs_sample, projected_nelder_mead

log = logging.getLogger(__name__)

__all__ = [
    "SOURCES",
    "FrontierPoint",
    "SweepConfig",
    "FrontierReport",
    "PremiumCache",
    "scalarized_solve",
    "lhs_sample",
    "dominance_mask",
    "pareto_filter",
    "evaluate_point",
    "build_frontier",
]

SOURCES = ("sweep", "lhs", "heuristic", "external")


@dataclass
class FrontierPoint:
    x: np.ndarray
    psi_o: float
    psi_p: float
    delta: float
    rho: float
    status: StatusLabel
    source: str
    dominated: bool = False
    weight: Optional[float] = None
    label: str = ""
    index: int = 0
    record: Optional[DiagnosticRecord] = field(default=None, repr=False)
    manifest: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def r_ll(self) -> float:
        return self.record.r_ll if self.record is not None else float("nan")

    @property
    def ni_gap(self) -> float:
        return self.record.ni_gap if self.record is not None else float("nan")


@dataclass(frozen=True)
class SweepConfig:
    """Sweep, fill and search settings.

    ``n_starts`` and ``max_fevals`` drive the Nelder-Mead multistart for
    each weight (``max_fevals`` per start). ``certify`` picks the check of
    each sweep optimum: ``"ni"`` runs the penalized Nikaido-Isoda
    evaluation, ``"gap"`` only evaluates the gap at the direct maximizer.
    """

    J: int = 21
    n_lhs: int = 80
    eps: float = 0.1
    seed: int = 7
    n_starts: int = 5
    max_fevals: Optional[int] = 400
    certify: str = "ni"
    ni_starts: Optional[int] = None

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("J must be at least 2")
        if self.n_lhs < 0 or self.n_starts < 1:
            raise ValueError("n_lhs must be >= 0 and n_starts >= 1")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.certify not in ("ni", "gap"):
            raise ValueError("certify must be 'ni' or 'gap'")

    @property
    def weights(self) -> np.ndarray:
        return np.arange(self.J) / (self.J - 1)

    def replace(self, **changes) -> "SweepConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


class PremiumCache:
    """Memoized ``(psi_o, psi_p)`` per leader point, shared across weights.

    The pessimistic solve is skipped when only ``psi_o`` is requested.
    Extrema use ``search_starts`` local solves; reported points are
    re-evaluated with the full multistart.
    """

    def __init__(self, inst: BilevelInstance, eps: float, config: ToleranceConfig):
        self.inst, self.eps, self.cfg = inst, eps, config
        self.lo: dict[bytes, float] = {}
        self.hi: dict[bytes, float] = {}
        self.lower: dict[bytes, object] = {}

    def _lower(self, x, key):
        if key not in self.lower:
            self.lower[key] = solve_lower(self.inst, x, self.cfg)
        return self.lower[key]

    def psi_o(self, x) -> float:
        key = x.tobytes()
        if key not in self.lo:
            lw = self._lower(x, key)
            self.lo[key] = solve_eps_extremum(self.inst, x, self.eps, "min", lw, self.cfg,
                                              n_starts=self.cfg.search_starts, kkt=False).value
        return self.lo[key]

    def psi_p(self, x) -> float:
        key = x.tobytes()
        if key not in self.hi:
            lw = self._lower(x, key)
            self.hi[key] = solve_eps_extremum(self.inst, x, self.eps, "max", lw, self.cfg,
                                              n_starts=self.cfg.search_starts, kkt=False).value
        return self.hi[key]

    def scalarized(self, x, omega: float) -> float:
        u = self.psi_o(x)
        if omega == 0.0:
            return u
        delta = max(self.psi_p(x) - u, 0.0)
        return (1.0 - omega) * u + omega * delta


def evaluate_point(inst: BilevelInstance, x, eps: float, source: str,
                   config: ToleranceConfig | None = None, label: str = "", index: int = 0,
                   weight: Optional[float] = None, certify: str = "gap",
                   ni_starts: Optional[int] = None) -> FrontierPoint:
    """Full diagnostics at a fixed decision.

    Heuristic and Latin-hypercube points start as ``heuristic``; sweep
    points carry the record's status until the caller combines it with the
    search status.
    """
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    manifest: dict = {}
    try:
        delta, rec = ambiguity_premium(inst, x, eps, cfg)
        if certify == "ni":
            ev = ni_penalized_eval(inst, x, eps, cfg, n_starts=ni_starts)
            manifest["ni"] = {"psi_p": ev.psi_p, "ni_gap": ev.ni_gap, "status": ev.status,
                              "sigma_final": ev.sigma_final, "starts_used": ev.starts_used,
                              "trace": ev.trace}
            if ev.status == "converged" and ev.psi_p > rec.psi_p:
                # both are local maxima; keep the larger certified one
                delta = max(ev.psi_p - rec.psi_o, 0.0)
                rec = rec.replace(psi_p=ev.psi_p, delta=delta, y_p=ev.y,
                                  rho=normalized_ratio(delta, rec.psi_o))
            ok = rec.status == StatusLabel.CONVERGED and ev.status == "converged"
            rec = rec.replace(ni_gap=ev.ni_gap,
                              status=StatusLabel.CONVERGED if ok else StatusLabel.INCUMBENT)
    except (EvaluationError, SolverFailure) as exc:
        nan = float("nan")
        rec = DiagnosticRecord(x=x, eps=float(eps), psi_o=nan, psi_p=nan, delta=nan, rho=nan,
                               r_ll=nan, ni_gap=nan, status=StatusLabel.INCUMBENT)
        manifest["error"] = str(exc)
    status = rec.status
    if source in ("lhs", "heuristic"):
        status = StatusLabel.HEURISTIC
    return FrontierPoint(x=x, psi_o=rec.psi_o, psi_p=rec.psi_p, delta=rec.delta, rho=rec.rho,
                         status=status, source=source, weight=weight, label=label,
                         index=index, record=rec, manifest=manifest)


def scalarized_solve(inst: BilevelInstance, eps: float, omega: float,
                     sweep: SweepConfig | None = None, config: ToleranceConfig | None = None,
                     starts: Optional[Sequence] = None,
                     cache: PremiumCache | None = None, index: int = 0) -> FrontierPoint:
    """Minimize ``(1 - omega) psi_o(x) + omega delta(x)`` over the leader set.

    Projected Nelder-Mead from the leader-set center and Latin-hypercube
    starts. The point is ``converged`` only if the best run's simplex
    shrank below ``nm_simplex_tol`` and the final diagnostics, including
    the pessimistic gap check, converged.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    cfg = resolve(config)
    sweep = sweep or SweepConfig(eps=eps)
    cache = cache or PremiumCache(inst, eps, cfg)
    lset = inst.leader_set
    if starts is None:
        starts = [lset.center()]
        if sweep.n_starts > 1:
            starts.extend(lhs_sample(lset, sweep.n_starts - 1, sweep.seed))
    obj = CachedObjective(lambda x: cache.scalarized(x, omega), lset)
    res = projected_nelder_mead(None, lset, starts, sweep.max_fevals, cfg, objective=obj)
    pt = evaluate_point(inst, res.x, eps, "sweep", cfg, label=f"omega={omega:g}", index=index,
                        weight=float(omega), certify=sweep.certify, ni_starts=sweep.ni_starts)
    ok = res.status == "converged" and pt.status == StatusLabel.CONVERGED
    pt.status = StatusLabel.CONVERGED if ok else StatusLabel.INCUMBENT
    pt.manifest["search"] = {"objective": res.value, "status": res.status,
                             "best_start": res.best_run, "nfev": res.nfev,
                             "runs": [r.to_dict() for r in res.runs]}
    return pt


def dominance_mask(u, d, tol: float = 1e-9) -> np.ndarray:
    """``mask[i]`` is true when some point dominates point ``i``.

    ``(u', d')`` dominates ``(u, d)`` iff ``u' <= u``, ``d' <= d`` and one
    inequality is strict; comparisons use the slack ``tol``.
    """
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    le = (u[:, None] <= u[None, :] + tol) & (d[:, None] <= d[None, :] + tol)
    lt = (u[:, None] < u[None, :] - tol) | (d[:, None] < d[None, :] - tol)
    return np.any(le & lt, axis=0)


def pareto_filter(points: Sequence[FrontierPoint], tol: float = 1e-9) -> list[FrontierPoint]:
    """Mark dominated flags in place and relabel sampled nondominated points.

    Points with non-finite coordinates are flagged dominated and never
    dominate others.
    """
    pts = list(points)
    if not pts:
        return pts
    u = np.array([p.psi_o for p in pts], dtype=float)
    d = np.array([p.delta for p in pts], dtype=float)
    finite = np.isfinite(u) & np.isfinite(d)
    mask = np.ones(len(pts), dtype=bool)
    if finite.any():
        mask[finite] = dominance_mask(u[finite], d[finite], tol)
    for p, dom in zip(pts, mask):
        p.dominated = bool(dom)
        if p.source in ("lhs", "heuristic") and not p.dominated:
            p.status = StatusLabel.EMPIRICAL_PARETO
        elif p.source in ("lhs", "heuristic") and p.status == StatusLabel.EMPIRICAL_PARETO:
            p.status = StatusLabel.HEURISTIC
    return pts


@dataclass
class FrontierReport:
    eps: float
    sweep: SweepConfig
    tolerances: ToleranceConfig
    points: list[FrontierPoint]
    instance: str = ""

    def nondominated(self) -> list[FrontierPoint]:
        return [p for p in self.points if not p.dominated]

    def by_source(self, source: str) -> list[FrontierPoint]:
        return [p for p in self.points if p.source == source]

    def columns(self) -> list[str]:
        n = len(self.points[0].x) if self.points else 0
        return (["source", "weight"] + [f"x{i + 1}" for i in range(n)]
                + ["psi_o", "psi_p", "delta", "rho", "r_ll", "ni_gap", "status", "dominated"])

    def rows(self, digits: int = 6) -> list[dict]:
        out = []
        for p in self.points:
            vals = ([p.source, p.weight] + list(p.x)
                    + [p.psi_o, p.psi_p, p.delta, p.rho, p.r_ll, p.ni_gap, p.status, p.dominated])
            out.append({k: format_sig(v, digits) for k, v in zip(self.columns(), vals)})
        return out

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        pts = []
        for p in self.points:
            pts.append({"source": p.source, "label": p.label, "index": p.index,
                        "weight": p.weight, "x": [float(v) for v in p.x],
                        "psi_o": p.psi_o, "psi_p": p.psi_p, "delta": p.delta, "rho": p.rho,
                        "r_ll": p.r_ll, "ni_gap": p.ni_gap, "status": str(p.status),
                        "dominated": p.dominated,
                        "record": p.record.to_dict() if p.record is not None else None,
                        "manifest": p.manifest})
        return {"instance": self.instance, "eps": self.eps, "sweep": self.sweep.to_dict(),
                "tolerances": self.tolerances.to_dict(), "points": pts}

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_json_default)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def plotdata(self, path: str | Path | None = None) -> str:
        """Gnuplot blocks of ``psi_o delta``: one per source, then the nondominated set."""
        lines = []
        blocks = [(s, self.by_source(s)) for s in SOURCES]
        blocks.append(("nondominated", sorted(self.nondominated(), key=lambda p: p.psi_o)))
        for name, pts in blocks:
            lines.append(f"# {name}")
            lines.extend(f"{format_sig(p.psi_o)} {format_sig(p.delta)}" for p in pts
                         if np.isfinite(p.psi_o) and np.isfinite(p.delta))
            lines.extend(["", ""])
        text = "\n".join(lines)
        if path is not None:
            Path(path).write_text(text)
        return text

    def gnuplot_script(self, data_name: str = "plotdata_frontier.dat",
                       path: str | Path | None = None) -> str:
        text = "\n".join([
            "set xlabel 'optimistic value psi_o'",
            "set ylabel 'ambiguity premium Delta'",
            f"set title 'eps = {self.eps:g}'",
            "set key outside",
            f"plot '{data_name}' index 1 with points pt 7 ps 0.6 lc rgb 'gray' title 'LHS', \\",
            f"     '{data_name}' index 0 with points pt 7 lc rgb 'blue' title 'sweep', \\",
            f"     '{data_name}' index 2 with points pt 5 lc rgb 'red' title 'heuristic', \\",
            f"     '{data_name}' index 4 with lines lc rgb 'black' title 'nondominated'",
            ""])
        if path is not None:
            Path(path).write_text(text)
        return text

    def write(self, out_dir: str | Path) -> list[str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.to_csv(out / "frontier.csv")
        self.to_json(out / "frontier.json")
        self.plotdata(out / "plotdata_frontier.dat")
        self.gnuplot_script(path=out / "plot_frontier.gp")
        return ["frontier.csv", "frontier.json", "plotdata_frontier.dat", "plot_frontier.gp"]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)


def build_frontier(inst: BilevelInstance, eps: float, sweep: SweepConfig | None = None,
                   heuristics: Sequence = (), config: ToleranceConfig | None = None,
                   heuristic_labels: Sequence[str] = (),
                   external: Sequence = ()) -> FrontierReport:
    """Sweep, Latin-hypercube fill and heuristic evaluation, then filtering.

    Sweep points are solved in weight order, each warm-started from the
    previous weight's optimum in addition to the common starts. The report
    is ordered by ``(source, index)``.
    """
    cfg = resolve(config)
    sweep = (sweep or SweepConfig(eps=eps)).replace(eps=eps)
    lset = inst.leader_set
    cache = PremiumCache(inst, eps, cfg)
    base = [lset.center()]
    if sweep.n_starts > 1:
        base.extend(lhs_sample(lset, sweep.n_starts - 1, sweep.seed))

    points = []
    prev = None
    for j, omega in enumerate(sweep.weights):
        starts = list(base) if prev is None else [prev] + list(base)
        pt = scalarized_solve(inst, eps, float(omega), sweep, cfg, starts, cache, index=j)
        prev = pt.x
        points.append(pt)
        log.info("omega=%.3f psi_o=%.4f delta=%.4f [%s] nfev=%d", omega, pt.psi_o, pt.delta,
                 pt.status, pt.manifest["search"]["nfev"])
    if sweep.n_lhs > 0:
        log.info("evaluating %d Latin-hypercube points", sweep.n_lhs)
        for k, x in enumerate(lhs_sample(lset, sweep.n_lhs, sweep.seed)):
            points.append(evaluate_point(inst, x, eps, "lhs", cfg, label=f"lhs{k}", index=k))
    labels = list(heuristic_labels) + [f"heuristic{k}" for k in range(len(heuristic_labels),
                                                                     len(heuristics))]
    for k, x in enumerate(heuristics):
        x = np.asarray(x, dtype=float)
        moved = not lset.contains(x, cfg.feas_tol)
        pt = evaluate_point(inst, lset.project(x) if moved else x, eps, "heuristic", cfg,
                            label=labels[k], index=k)
        pt.manifest["projected"] = moved
        points.append(pt)
    for k, x in enumerate(external):
        points.append(evaluate_point(inst, x, eps, "external", cfg, label=f"external{k}",
                                     index=k))
    points.sort(key=lambda p: (SOURCES.index(p.source), p.index))
    pareto_filter(points, cfg.dominance_tol)
    return FrontierReport(eps=float(eps), sweep=sweep, tolerances=cfg, points=points,
                          instance=inst.name)
