"""The two reference instances, their closed forms, and instance-file loading.

Case 1 is a two-link toll-pricing game whose follower is indifferent along a
line of tolls; every quantity has a closed form. Case 2 is a four-technology
capacity-planning model with a strictly convex follower and diversification
constraints on the leader. Parameters live in ``data/case1.toml`` and
``data/case2.toml``.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .config import load_mapping
from .lower import solve_lower
from .problem import (BilevelInstance, FollowerSet, LeaderSet, QuadraticObjective)

DATA = resources.files("bilevel_ambiguity") / "data"


def data_path(name: str) -> Path:
    return Path(str(DATA / name))


# ---------------------------------------------------------------------------
# case 1


@dataclass(frozen=True)
class Case1Params:
    a: tuple = (1.0, 1.2)
    c: tuple = (1.5, 1.0)
    alpha: float = 0.3
    beta: float = 0.05
    lo: tuple = (0.0, 0.0)
    hi: tuple = (2.0, 2.0)

    @classmethod
    def from_mapping(cls, data: dict) -> "Case1Params":
        p = data.get("params", {})
        lead = data.get("leader", {})
        return cls(a=tuple(p.get("access_cost", cls.a)), c=tuple(p.get("congestion", cls.c)),
                   alpha=float(p.get("revenue_weight", cls.alpha)),
                   beta=float(p.get("toll_penalty", cls.beta)),
                   lo=tuple(lead.get("lo", cls.lo)), hi=tuple(lead.get("hi", cls.hi)))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Case1Params":
        return cls.from_mapping(load_mapping(path or data_path("case1.toml")))

    def indifference_gap(self, x) -> float:
        """``delta(x) = (a2 + x2) - (a1 + x1)``; zero on the indifference line."""
        return (self.a[1] + x[1]) - (self.a[0] + x[0])


def case1_instance(params: Case1Params | None = None) -> BilevelInstance:
    p = params or Case1Params.load()
    a = np.asarray(p.a)
    c = np.asarray(p.c)
    upper = QuadraticObjective(P=2 * p.beta * np.eye(2), R=-p.alpha * np.eye(2),
                               Q=2 * np.diag(c), p=np.zeros(2), q=np.zeros(2))
    lower = QuadraticObjective(P=np.zeros((2, 2)), R=np.eye(2), Q=np.zeros((2, 2)),
                               p=np.zeros(2), q=a)

    def lipschitz(x):
        # |grad_y F| is convex in y, so its max over the simplex sits at a vertex
        x = np.asarray(x, dtype=float)
        return max(np.linalg.norm(2 * c * v - p.alpha * x) for v in np.eye(2))

    return BilevelInstance(upper=upper, lower=lower,
                           leader_set=LeaderSet(p.lo, p.hi),
                           follower_set=FollowerSet.simplex(2),
                           lipschitz_upper_bound=lipschitz, name="case1")


@dataclass(frozen=True)
class ResponseSet:
    """Case-1 follower response set as a segment of the simplex.

    ``y = (t, 1 - t)`` for ``t`` in ``[t_lo, t_hi]``.
    """

    kind: str  # "link1" | "link2" | "simplex" | "segment"
    t_lo: float
    t_hi: float
    s_max: float = 0.0

    def points(self) -> np.ndarray:
        return np.array([[self.t_lo, 1 - self.t_lo], [self.t_hi, 1 - self.t_hi]])


def case1_exact_response_set(params: Case1Params, x, tol: float = 1e-12) -> ResponseSet:
    d = params.indifference_gap(x)
    if abs(d) <= tol:
        return ResponseSet("simplex", 0.0, 1.0, 1.0)
    if d > 0:
        return ResponseSet("link1", 1.0, 1.0)
    return ResponseSet("link2", 0.0, 0.0)


def case1_eps_response_set(params: Case1Params, x, eps: float, tol: float = 1e-12) -> ResponseSet:
    """``S_eps(x)`` as ``{(1-s, s)}`` (or ``{(s, 1-s)}``), ``s`` in ``[0, min(1, eps/|delta|)]``."""
    d = params.indifference_gap(x)
    if abs(d) <= tol:
        return ResponseSet("simplex", 0.0, 1.0, 1.0)
    s_max = min(1.0, eps / abs(d))
    if d > 0:  # link 1 cheaper, anchored at (1, 0)
        return ResponseSet("segment", 1.0 - s_max, 1.0, s_max)
    return ResponseSet("segment", 0.0, s_max, s_max)


def case1_F_along_simplex(params: Case1Params, x, t):
    """``F(x, (t, 1-t))``."""
    x = np.asarray(x, dtype=float)
    c1, c2 = params.c
    t = np.asarray(t, dtype=float)
    return (c1 * t ** 2 + c2 * (1 - t) ** 2 - params.alpha * (x[0] * t + x[1] * (1 - t))
            + params.beta * float(x @ x))


def case1_t_star(params: Case1Params, x) -> float:
    c1, c2 = params.c
    t = (c2 + 0.5 * params.alpha * (x[0] - x[1])) / (c1 + c2)
    return float(np.clip(t, 0.0, 1.0))


@dataclass(frozen=True)
class Case1Diagnostics:
    psi_o: float
    psi_p: float
    delta: float
    t_star: float
    rho: float
    response: ResponseSet


def case1_analytic_diagnostics(params: Case1Params, x, eps: float,
                               tol: float = 1e-12) -> Case1Diagnostics:
    """Exact optimistic/pessimistic values from the quadratic in ``t``."""
    seg = case1_eps_response_set(params, x, eps, tol)
    t_star = case1_t_star(params, x)
    t_min = float(np.clip(t_star, seg.t_lo, seg.t_hi))
    psi_o = float(case1_F_along_simplex(params, x, t_min))
    # strictly convex in t: the maximum sits at an endpoint
    psi_p = float(max(case1_F_along_simplex(params, x, seg.t_lo),
                      case1_F_along_simplex(params, x, seg.t_hi)))
    delta = psi_p - psi_o
    return Case1Diagnostics(psi_o, psi_p, delta, t_star, delta / (1 + abs(psi_o)), seg)


# ---------------------------------------------------------------------------
# case 2


@dataclass(frozen=True)
class Case2Params:
    kappa: tuple = (0.1025, 0.1255, 0.0822, 0.1070)
    alpha: tuple = (0.246, 0.345, 0.870, 0.200)
    w: tuple = (3.0, 2.5, 1.0, 2.0)
    mu_D: float = 2.0
    D: float = 5.0
    beta: tuple = (0.15, 0.12, 0.05, 0.08)
    lambda_D: float = 1.5
    c_tilde: tuple = (0.005, 0.007, 0.0286, 0.0082)
    variable_cost: tuple = (5.0, 7.0, 28.6, 8.2)
    share_cap: float = 0.6
    min_build: tuple = (0.2, 0.2, 0.5, 0.1)
    x_hi: tuple = (8.0, 6.0, 10.0, 4.0)
    y_lo: tuple = (0.0, 0.0, 0.0, 0.0)
    y_hi: tuple = (6.0, 5.0, 9.0, 3.5)
    growth: float = 1.0
    technologies: tuple = field(default=("solar_pv", "onshore_wind", "gas_ccgt", "battery_4h"))

    @classmethod
    def from_mapping(cls, data: dict) -> "Case2Params":
        p = data.get("params", {})
        lead = data.get("leader", {})
        fol = data.get("follower", {})
        d = cls()
        tup = lambda key, default: tuple(float(v) for v in p.get(key, default))
        return cls(
            kappa=tup("annualized_capital", d.kappa),
            alpha=tup("capacity_factor", d.alpha),
            w=tup("dispatch_weight", d.w),
            mu_D=float(p.get("balance_weight", d.mu_D)),
            D=float(p.get("demand", d.D)),
            beta=tup("deviation_cost", d.beta),
            lambda_D=float(p.get("imbalance_cost", d.lambda_D)),
            c_tilde=tup("dispatch_cost", d.c_tilde),
            variable_cost=tup("variable_cost", d.variable_cost),
            share_cap=float(p.get("share_cap", d.share_cap)),
            min_build=tuple(float(v) for v in lead.get("lo", d.min_build)),
            x_hi=tuple(float(v) for v in lead.get("hi", d.x_hi)),
            y_lo=tuple(float(v) for v in fol.get("lo", d.y_lo)),
            y_hi=tuple(float(v) for v in fol.get("hi", d.y_hi)),
            growth=float(p.get("growth_modulus", d.growth)),
            technologies=tuple(p.get("technologies", d.technologies)),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Case2Params":
        return cls.from_mapping(load_mapping(path or data_path("case2.toml")))

    def leader_rows(self):
        """``sum(x) >= D`` and ``x_i <= share_cap * sum(x)`` as ``a·x <= b`` rows."""
        n = len(self.kappa)
        rows = [([-1.0] * n, -self.D)]
        for i in range(n):
            rows.append(([(1.0 if j == i else 0.0) - self.share_cap for j in range(n)], 0.0))
        return rows


def case2_instance(params: Case2Params | None = None) -> BilevelInstance:
    p = params or Case2Params.load()
    n = len(p.kappa)
    kappa, alpha, w = map(np.asarray, (p.kappa, p.alpha, p.w))
    beta, ct = np.asarray(p.beta), np.asarray(p.c_tilde)
    ones = np.ones((n, n))
    upper = QuadraticObjective(
        P=2 * np.diag(beta), R=-2 * np.diag(beta),
        Q=2 * np.diag(beta) + 2 * p.lambda_D * ones,
        p=kappa, q=ct - 2 * p.lambda_D * p.D * np.ones(n), k=p.lambda_D * p.D ** 2)
    lower = QuadraticObjective(
        P=2 * np.diag(w * alpha ** 2), R=-2 * np.diag(w * alpha),
        Q=2 * np.diag(w) + 2 * p.mu_D * ones,
        p=np.zeros(n), q=-2 * p.mu_D * p.D * np.ones(n), k=p.mu_D * p.D ** 2)
    y_lo, y_hi = np.asarray(p.y_lo), np.asarray(p.y_hi)
    vertices = np.array([np.where(bits, y_hi, y_lo)
                         for bits in itertools.product([0, 1], repeat=n)], dtype=float)

    def lipschitz(x):
        # |grad_y F(x, ·)| is convex, so the max over the box is at a vertex
        x = np.asarray(x, dtype=float)
        return max(np.linalg.norm(upper.grad_y(x, v)) for v in vertices)

    return BilevelInstance(
        upper=upper, lower=lower,
        leader_set=LeaderSet.from_rows(p.min_build, p.x_hi, p.leader_rows()),
        follower_set=FollowerSet.box(y_lo, y_hi),
        lipschitz_upper_bound=lipschitz,
        growth_modulus=lambda x: p.growth,
        name="case2")


@dataclass(frozen=True)
class ClosedFormResponse:
    y: np.ndarray
    interior: bool
    fallback: bool


def case2_lower_closed_form(params: Case2Params, x, inst: BilevelInstance | None = None,
                            margin: float = 0.0) -> ClosedFormResponse:
    """Interior stationary point of the dispatch problem.

    ``y_i = alpha_i x_i - (mu_D / w_i)(S - D)`` with the aggregate
    ``S = (sum alpha_i x_i + mu_D D sum 1/w_i) / (1 + mu_D sum 1/w_i)``.
    When the point leaves the box ``Y`` the generic solver is used instead
    and ``fallback`` is set.
    """
    x = np.asarray(x, dtype=float)
    alpha, w = np.asarray(params.alpha), np.asarray(params.w)
    inv = (1.0 / w).sum()
    S = (alpha @ x + params.mu_D * params.D * inv) / (1.0 + params.mu_D * inv)
    y = alpha * x - (params.mu_D / w) * (S - params.D)
    interior = bool(np.all(y > np.asarray(params.y_lo) + margin)
                    and np.all(y < np.asarray(params.y_hi) - margin))
    if interior:
        return ClosedFormResponse(y, True, False)
    inst = inst or case2_instance(params)
    return ClosedFormResponse(solve_lower(inst, x).y_star, False, True)


def convex_combinations(x_a, x_b, ts=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Points ``(1 - t) x_a + t x_b`` on the segment between two policies."""
    x_a, x_b = np.asarray(x_a, dtype=float), np.asarray(x_b, dtype=float)
    return np.array([(1 - t) * x_a + t * x_b for t in ts])


# ---------------------------------------------------------------------------
# instance files and golden tables


def load_instance(path: str | Path) -> BilevelInstance:
    """Build an instance from a TOML/JSON description.

    ``builtin`` selects ``case1``, ``case2`` or ``custom-quadratic``. A
    custom quadratic instance gives ``[leader]`` (``lo``, ``hi`` and
    optional ``rows = [{a = [...], b = ...}]``), ``[follower]`` (``kind``
    = ``box`` with ``lo``/``hi`` or ``simplex`` with ``dim``/``total``) and
    ``[upper]``/``[lower]`` coefficient blocks ``P, R, Q, p, q, k``.
    """
    data = load_mapping(path)
    builtin = data.get("builtin", "custom-quadratic")
    if builtin == "case1":
        return case1_instance(Case1Params.from_mapping(data))
    if builtin == "case2":
        return case2_instance(Case2Params.from_mapping(data))
    if builtin != "custom-quadratic":
        raise ValueError(f"unknown builtin objective {builtin!r}")
    lead, fol = data["leader"], data["follower"]
    rows = [(r["a"], r["b"]) for r in lead.get("rows", [])]
    lset = LeaderSet.from_rows(lead["lo"], lead["hi"], rows)
    if fol.get("kind", "box") == "simplex":
        fset = FollowerSet.simplex(int(fol["dim"]), float(fol.get("total", 1.0)))
    else:
        fset = FollowerSet.box(fol["lo"], fol["hi"])
    n, m = lset.dim, fset.dim

    def block(spec):
        return QuadraticObjective(
            P=spec.get("P", np.zeros((n, n))), R=spec.get("R", np.zeros((n, m))),
            Q=spec.get("Q", np.zeros((m, m))), p=spec.get("p", np.zeros(n)),
            q=spec.get("q", np.zeros(m)), k=spec.get("k", 0.0))

    growth = data.get("growth_modulus")
    return BilevelInstance(upper=block(data["upper"]), lower=block(data["lower"]),
                           leader_set=lset, follower_set=fset,
                           growth_modulus=(lambda x: float(growth)) if growth else None,
                           name=data.get("name", "custom"))


def run_defaults(path: str | Path) -> dict:
    return dict(load_mapping(path).get("run", {}))


def read_csv_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def golden_table1() -> list[dict]:
    return read_csv_rows(data_path("golden_table1.csv"))


def golden_table4() -> list[dict]:
    return read_csv_rows(data_path("golden_table4.csv"))


def golden_sqrt_scan() -> list[dict]:
    return read_csv_rows(data_path("golden_sqrt_scan.csv"))


def read_points(path: str | Path, dim: Optional[int] = None) -> tuple[list[str], np.ndarray]:
    """Labelled leader points from CSV (``label,x1..xn``) or JSON.

    JSON may be a list of coordinate lists or of ``{"label", "x"}`` objects.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        raw = json.loads(path.read_text())
        labels, pts = [], []
        for i, item in enumerate(raw):
            if isinstance(item, dict):
                labels.append(str(item.get("label", f"h{i}")))
                pts.append(item["x"])
            else:
                labels.append(f"h{i}")
                pts.append(item)
        arr = np.asarray(pts, dtype=float)
    else:
        rows = read_csv_rows(path)
        labels = [r.get("label", f"h{i}") for i, r in enumerate(rows)]
        keys = sorted((k for k in rows[0] if k and k.startswith("x")), key=lambda k: int(k[1:]))
        arr = np.array([[float(r[k]) for k in keys] for r in rows])
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"points have dimension {arr.shape[1]}, expected {dim}")
    return labels, arr
