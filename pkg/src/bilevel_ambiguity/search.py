"""Derivative-free multistart search over the leader set.

Nelder-Mead on the unconstrained space, with every trial point projected onto
the leader set before evaluation and an additive penalty
``(1 + |value|) * dist^2`` for the distance the projection moved it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .config import ToleranceConfig, resolve
from .problem import EvaluationError, LeaderSet, SolverFailure, derive_rng, latin_hypercube

__all__ = ["lhs_sample", "CachedObjective", "SearchRun", "SearchResult", "projected_nelder_mead"]


def lhs_sample(leader_set: LeaderSet, n: int, seed: int = 7) -> np.ndarray:
    """Latin-hypercube points in the leader box, projected onto the leader set.

    Deterministic in ``(leader_set, n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = derive_rng(seed, "lhs", leader_set.lo, leader_set.hi, [n])
    u = latin_hypercube(n, leader_set.dim, rng)
    pts = leader_set.lo + u * (leader_set.hi - leader_set.lo)
    if leader_set.has_inequalities:
        pts = np.array([leader_set.project(p) for p in pts])
    return pts


class CachedObjective:
    """Memoized objective on projected leader points.

    ``fun`` is called only at points of the leader set; failed evaluations
    are stored as ``+inf`` so the simplex moves away from them.
    """

    def __init__(self, fun: Callable[[np.ndarray], float], leader_set: LeaderSet):
        self.fun = fun
        self.leader_set = leader_set
        self.cache: dict[bytes, float] = {}
        self.n_calls = 0

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key not in self.cache:
            self.n_calls += 1
            try:
                val = float(self.fun(x))
            except (EvaluationError, SolverFailure):
                val = np.inf
            self.cache[key] = val if np.isfinite(val) else np.inf
        return self.cache[key]

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        x = self.leader_set.project(z)
        val = self.value(x)
        d2 = float((z - x) @ (z - x))
        if d2 == 0.0 or not np.isfinite(val):
            return val
        return val + (1.0 + abs(val)) * d2


@dataclass
class SearchRun:
    start_index: int
    x0: np.ndarray
    x: np.ndarray
    value: float
    nfev: int
    diameter: float
    status: str
    message: str = ""

    def to_dict(self) -> dict:
        return {"start_index": self.start_index, "x0": [float(v) for v in self.x0],
                "x": [float(v) for v in self.x], "value": self.value, "nfev": self.nfev,
                "simplex_diameter": self.diameter, "status": self.status,
                "message": self.message}


@dataclass
class SearchResult:
    x: np.ndarray
    value: float
    status: str
    runs: list[SearchRun] = field(default_factory=list)
    best_run: int = 0

    @property
    def nfev(self) -> int:
        return sum(r.nfev for r in self.runs)


def _initial_simplex(x0, leader_set: LeaderSet, scale: float = 0.1) -> np.ndarray:
    step = scale * (leader_set.hi - leader_set.lo)
    step = np.where(step > 0, step, scale)
    sim = [x0]
    for i in range(len(x0)):
        v = x0.copy()
        v[i] = v[i] + step[i] if v[i] + step[i] <= leader_set.hi[i] else v[i] - step[i]
        sim.append(v)
    return np.array(sim)


def _diameter(sim: np.ndarray) -> float:
    d = sim[:, None, :] - sim[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


def projected_nelder_mead(fun: Callable[[np.ndarray], float], leader_set: LeaderSet,
                          starts: Sequence, max_fevals: Optional[int] = 400,
                          config: ToleranceConfig | None = None,
                          objective: CachedObjective | None = None) -> SearchResult:
    """Multistart Nelder-Mead restricted to the leader set by projection.

    Parameters
    ----------
    fun : callable
        Objective on leader points.
    starts : sequence of array_like
        Start points; projected before use.
    max_fevals : int or None
        Per-start budget. ``0`` evaluates the starts only.

    Returns
    -------
    SearchResult
        Best run (lowest value, ties to the lowest start index). A run is
        ``converged`` when the final simplex diameter is at most
        ``nm_simplex_tol``, even if the evaluation budget ran out first.
    """
    cfg = resolve(config)
    obj = objective or CachedObjective(fun, leader_set)
    runs = []
    for k, s in enumerate(starts):
        x0 = leader_set.project(np.asarray(s, dtype=float))
        if max_fevals == 0:
            runs.append(SearchRun(k, x0, x0, obj.value(x0), 1, np.inf, "incumbent", "budget 0"))
            continue
        before = obj.n_calls
        # scipy's xatol bounds inf-norm offsets from the best vertex; scale it
        # so that passing it bounds the Euclidean diameter
        xatol = cfg.nm_simplex_tol / (2.0 * np.sqrt(len(x0)))
        res = minimize(obj, x0, method="Nelder-Mead",
                       options={"maxfev": max_fevals, "xatol": xatol,
                                "fatol": cfg.nm_fatol,
                                "initial_simplex": _initial_simplex(x0, leader_set)})
        sim = res.final_simplex[0]
        x = leader_set.project(res.x)
        diam = _diameter(sim)
        # the simplex size alone decides; a collapsed simplex whose values
        # still spread over fatol is reported through the message
        ok = diam <= cfg.nm_simplex_tol
        runs.append(SearchRun(k, x0, x, obj.value(x), obj.n_calls - before, diam,
                              "converged" if ok else "incumbent", str(res.message)))
    if not runs:
        raise ValueError("no start points")
    best = min(range(len(runs)), key=lambda i: (runs[i].value, i))
    r = runs[best]
    return SearchResult(x=r.x, value=r.value, status=r.status, runs=runs, best_run=best)
