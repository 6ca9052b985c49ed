"""Decision diagnostics: ambiguity premium, normalized ratio and residuals.

Also hosts the executable forms of the theory-derived checks (restricted
diameter bound, square-root rate in ``eps``) and the flat serialization of
:class:`DiagnosticRecord`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .config import ToleranceConfig, resolve
from .lower import (EpsExtremum, LowerSolution, level_support_point, solve_eps_extremum,
                    solve_lower)
from .problem import BilevelInstance, derive_rng

__all__ = [
    "StatusLabel",
    "DiagnosticRecord",
    "ambiguity_premium",
    "normalized_ratio",
    "clamp_premium",
    "ll_residual",
    "fischer_burmeister",
    "fb_stationarity_residual",
    "fitted_stationarity_residual",
    "sample_eps_set",
    "CandidatePool",
    "DiameterCheck",
    "diameter_bound_check",
    "restricted_diameter_check",
    "RateEntry",
    "sqrt_rate_scan",
    "records_to_csv",
    "records_to_json",
    "format_sig",
]


class StatusLabel(str, Enum):
    """Computational provenance of a reported point."""

    CONVERGED = "converged"
    INCUMBENT = "incumbent"
    HEURISTIC = "heuristic"
    EMPIRICAL_PARETO = "empirical_pareto"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DiagnosticRecord:
    """Per-decision diagnostics at one ``(x, eps)``.

    ``g_stat`` is only present when a stationarity triple was supplied;
    ``lambda_source`` records whether its multiplier came from a subproblem
    solver (``"solver"``) or from a one-dimensional fit (``"fitted"``).
    """

    x: np.ndarray
    eps: float
    psi_o: float
    psi_p: float
    delta: float
    rho: float
    r_ll: float
    ni_gap: float
    status: StatusLabel
    g_stat: Optional[float] = None
    lambda_source: Optional[str] = None
    phi: float = float("nan")
    y_o: Optional[np.ndarray] = field(default=None, repr=False)
    y_p: Optional[np.ndarray] = field(default=None, repr=False)

    def replace(self, **changes) -> "DiagnosticRecord":
        return replace(self, **changes)

    def columns(self) -> list[str]:
        return ([f"x{i + 1}" for i in range(len(self.x))]
                + ["eps", "psi_o", "psi_p", "delta", "rho", "r_ll", "g_stat", "ni_gap", "status"])

    def values(self) -> list:
        return [*map(float, self.x), self.eps, self.psi_o, self.psi_p, self.delta, self.rho,
                self.r_ll, self.g_stat, self.ni_gap, str(self.status)]

    def to_row(self, digits: int = 6) -> dict[str, str]:
        """Flat CSV row; floats at ``digits`` significant digits."""
        return {k: format_sig(v, digits) for k, v in zip(self.columns(), self.values())}

    def to_dict(self) -> dict:
        """JSON-ready mapping at full precision with a fixed key order."""
        out = dict(zip(self.columns(), self.values()))
        out["lambda_source"] = self.lambda_source
        out["phi"] = self.phi
        if self.y_o is not None:
            out["y_o"] = [float(v) for v in self.y_o]
        if self.y_p is not None:
            out["y_p"] = [float(v) for v in self.y_p]
        return out


def format_sig(value, digits: int = 6) -> str:
    if value is None:
        return ""
    if isinstance(value, (str, Enum)):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return "yes" if value else "no"
    v = float(value)
    if v == 0.0:
        return "0"
    return f"{v:.{digits}g}"


def records_to_csv(records: Sequence[DiagnosticRecord], path: str | Path | None = None,
                   digits: int = 6) -> str:
    buf = io.StringIO()
    if records:
        writer = csv.DictWriter(buf, fieldnames=records[0].columns(), lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.to_row(digits))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def records_to_json(records: Sequence[DiagnosticRecord], path: str | Path | None = None) -> str:
    text = json.dumps([r.to_dict() for r in records], indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


# ---------------------------------------------------------------------------
# premium and scalar diagnostics


def normalized_ratio(delta: float, psi_o: float) -> float:
    """``delta / (1 + |psi_o|)``."""
    return float(delta) / (1.0 + abs(float(psi_o)))


def clamp_premium(delta: float, tol: float = 1e-9) -> float:
    """Clamp solver noise: values in ``[-tol, 0)`` become 0."""
    if -tol <= delta < 0.0:
        return 0.0
    return float(delta)


def ll_residual(inst: BilevelInstance, x, y, eps: float, phi: float) -> float:
    """Tolerance-violation residual ``max(0, f(x, y) - phi - eps)``."""
    return max(0.0, inst.f(x, y) - phi - eps)


def ambiguity_premium(inst: BilevelInstance, x, eps: float,
                      config: ToleranceConfig | None = None,
                      lower: LowerSolution | None = None,
                      certify: bool = True) -> tuple[float, DiagnosticRecord]:
    """Ambiguity premium ``psi_p - psi_o`` over the eps-response set.

    Both extrema are direct multistart solves. With ``certify`` the
    pessimistic maximizer is checked by the Nikaido-Isoda gap at
    ``(y_max, y*)``, re-solving the inner supremum from an independent
    start stream; otherwise ``ni_gap`` is reported as ``nan``.

    Returns
    -------
    delta : float
        Premium, clamped to 0 when within ``-clamp_tol``.
    record : DiagnosticRecord
        Everything except ``g_stat``.
    """
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    lo = solve_eps_extremum(inst, x, eps, "min", lower, cfg)
    hi = solve_eps_extremum(inst, x, eps, "max", lower, cfg)
    return _assemble(inst, x, eps, lower, lo, hi, cfg, certify)


def _assemble(inst, x, eps, lower, lo: EpsExtremum, hi: EpsExtremum, cfg, certify):
    from .pessimistic import ni_gap

    delta = clamp_premium(hi.value - lo.value, cfg.clamp_tol)
    gap = float("nan")
    if certify:
        gap = ni_gap(inst, x, hi.y, lower.y_star, eps, lower=lower, config=cfg,
                     stream="ni-certify")
    ok = (lower.status == "converged" and lo.status == "converged"
          and hi.status == "converged" and delta >= 0.0
          and (not certify or gap <= cfg.ni_gap_tol))
    rec = DiagnosticRecord(
        x=x, eps=float(eps), psi_o=lo.value, psi_p=hi.value, delta=delta,
        rho=normalized_ratio(delta, lo.value),
        r_ll=ll_residual(inst, x, lo.y, eps, lower.phi), ni_gap=gap,
        status=StatusLabel.CONVERGED if ok else StatusLabel.INCUMBENT,
        phi=lower.phi, y_o=lo.y, y_p=hi.y)
    return delta, rec


# ---------------------------------------------------------------------------
# stationarity residual


def fischer_burmeister(a, b):
    """``a + b - sqrt(a^2 + b^2)``; zero iff ``a >= 0, b >= 0, ab = 0``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.hypot(a, b)


def _fb_blocks(inst: BilevelInstance, x, y, v, eps):
    """Pieces of the residual that do not depend on the multiplier."""
    up, lw = inst.upper, inst.lower
    gxF, gyF = up.grad_x(x, y), up.grad_y(x, y)
    dx = lw.grad_x(x, y) - lw.grad_x(x, v)
    gyf = lw.grad_y(x, y)
    r_v = v - inst.follower_set.project(v - lw.grad_y(x, v))
    slack = -(inst.f(x, y) - inst.f(x, v) - eps)
    return gxF, gyF, dx, gyf, float(r_v @ r_v), slack


def _fb_value(inst, x, y, v, lam, blocks) -> float:
    gxF, gyF, dx, gyf, rv2, slack = blocks
    r_x = x - inst.leader_set.project(x - (gxF + lam * dx))
    r_y = y - inst.follower_set.project(y - (gyF + lam * gyf))
    fb = float(fischer_burmeister(lam, slack))
    return float(np.sqrt(r_x @ r_x + r_y @ r_y + rv2 + fb * fb))


def fb_stationarity_residual(inst: BilevelInstance, x, y, v, lam: float, eps: float) -> float:
    """Natural-residual / Fischer-Burmeister stationarity measure.

    Square root of the sum of the leader block
    ``|R_X(x, grad_x F + lam (grad_x f(x, y) - grad_x f(x, v)))|^2``, the
    follower block ``|R_Y(y, grad_y F + lam grad_y f(x, y))|^2``, the
    lower-level block ``|R_Y(v, grad_y f(x, v))|^2`` and the complementarity
    term ``phi_FB(lam, -(f(x, y) - f(x, v) - eps))^2``, where
    ``R_C(z, w) = z - P_C(z - w)``.
    """
    if lam < 0:
        raise ValueError("multiplier must be nonnegative")
    inst.require_gradients()
    x, y, v = (np.asarray(a, dtype=float) for a in (x, y, v))
    return _fb_value(inst, x, y, v, float(lam), _fb_blocks(inst, x, y, v, eps))


def fitted_stationarity_residual(inst: BilevelInstance, x, y, v, eps: float,
                                 lam_max: float | None = None) -> tuple[float, float]:
    """Residual at the multiplier minimizing it over ``lam >= 0``.

    Fallback for standalone diagnostics when no subproblem multiplier is
    available; callers should label the result ``"fitted"``.

    Returns
    -------
    (residual, lam)
    """
    inst.require_gradients()
    x, y, v = (np.asarray(a, dtype=float) for a in (x, y, v))
    blocks = _fb_blocks(inst, x, y, v, eps)
    fun = lambda lam: _fb_value(inst, x, y, v, lam, blocks)
    if lam_max is None:
        gxF, gyF, dx, gyf = blocks[:4]
        scale = np.sqrt(dx @ dx + gyf @ gyf)
        lam_max = 10.0 * (1.0 + np.sqrt(gxF @ gxF + gyF @ gyF) / scale) if scale > 0 else 10.0
    # coarse grid guards against the residual being multimodal in lam
    grid = np.concatenate([[0.0], np.geomspace(1e-6, lam_max, 60)])
    vals = [fun(g) for g in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best_lam, best = float(grid[k]), float(vals[k])
    if hi > lo:
        out = minimize_scalar(fun, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * (1.0 + hi)})
        if out.fun < best:
            best_lam, best = float(out.x), float(out.fun)
    return best, best_lam


# ---------------------------------------------------------------------------
# diameter bound


@dataclass(frozen=True)
class CandidatePool:
    """Eps-feasible follower points gathered at one ``(x, eps)``."""

    points: np.ndarray
    values: np.ndarray  # F(x, point)
    level: float

    @property
    def width(self) -> float:
        return float(self.values.max() - self.values.min())

    @property
    def diameter(self) -> float:
        p = self.points
        d = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))
        return float(d.max())


def sample_eps_set(inst: BilevelInstance, x, eps: float, n_samples: int | None = None,
                   config: ToleranceConfig | None = None,
                   lower: LowerSolution | None = None,
                   extrema: Iterable[EpsExtremum] = ()) -> CandidatePool:
    """Eps-feasible points from support-point solves in random directions.

    The exact response, the supplied extrema and every support point that
    satisfies the level constraint to ``feas_tol`` form the pool.
    """
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    n_samples = cfg.diam_samples if n_samples is None else n_samples
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    level = lower.phi + eps
    pts = [lower.y_star] + [e.y for e in extrema]
    rng = derive_rng(cfg.seed, "diameter", x, [eps])
    dirs = rng.standard_normal((n_samples, inst.m))
    for d in dirs:
        pts.append(level_support_point(inst, x, level, d, lower.y_star, cfg))
    pts = np.array([p for p in pts if inst.f(x, p) <= level + cfg.feas_tol])
    vals = np.array([inst.F(x, p) for p in pts])
    return CandidatePool(points=pts, values=vals, level=level)


@dataclass(frozen=True)
class DiameterCheck:
    delta: float
    bound: float
    diameter: float
    lipschitz: float
    holds: bool


def diameter_bound_check(inst: BilevelInstance, x, eps: float, n_samples: int | None = None,
                         config: ToleranceConfig | None = None) -> DiameterCheck:
    """Compare the premium with ``L_F(x) * diam(S_eps(x))``.

    The diameter is estimated from inside the set, by the largest pairwise
    distance over sampled eps-feasible points and the two extrema.
    """
    if inst.lipschitz_upper_bound is None:
        raise ValueError("instance has no Lipschitz bound evaluator")
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    lower = solve_lower(inst, x, cfg)
    lo = solve_eps_extremum(inst, x, eps, "min", lower, cfg)
    hi = solve_eps_extremum(inst, x, eps, "max", lower, cfg)
    pool = sample_eps_set(inst, x, eps, n_samples, cfg, lower, (lo, hi))
    delta = clamp_premium(hi.value - lo.value, cfg.clamp_tol)
    L = float(inst.lipschitz_upper_bound(x))
    bound = L * pool.diameter
    return DiameterCheck(delta, bound, pool.diameter, L, delta <= bound + 1e-6)


def restricted_diameter_check(inst: BilevelInstance, x, pool: CandidatePool,
                              slack: float = 1e-6) -> tuple[float, float, bool]:
    """Lipschitz inequality on a pooled set: ``width <= L_F(x) * diam + slack``."""
    L = float(inst.lipschitz_upper_bound(np.asarray(x, dtype=float)))
    bound = L * pool.diameter
    return pool.width, bound, pool.width <= bound + slack


# ---------------------------------------------------------------------------
# square-root rate


@dataclass(frozen=True)
class RateEntry:
    eps: float
    delta: float
    ratio: float
    cap: Optional[float]  # 2 L_F(x) sqrt(eps / mu(x)) when mu is known
    psi_o: float
    psi_p: float
    status: StatusLabel


def sqrt_rate_scan(inst: BilevelInstance, x, eps_grid: Sequence[float],
                   config: ToleranceConfig | None = None) -> list[RateEntry]:
    """Premium and ``delta / sqrt(eps)`` along an ascending grid.

    When the instance supplies a growth modulus the theoretical cap
    ``2 L_F(x) sqrt(eps / mu(x))`` for a singleton exact response set is
    attached to each entry.
    """
    grid = np.asarray(eps_grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("eps grid must be positive and strictly ascending")
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    lower = solve_lower(inst, x, cfg)
    L = mu = None
    if inst.growth_modulus is not None and inst.lipschitz_upper_bound is not None:
        L = float(inst.lipschitz_upper_bound(x))
        mu = float(inst.growth_modulus(x))
    out = []
    for eps in grid:
        delta, rec = ambiguity_premium(inst, x, float(eps), cfg, lower, certify=False)
        cap = 2.0 * L * np.sqrt(eps / mu) if L is not None else None
        out.append(RateEntry(float(eps), delta, delta / np.sqrt(eps), cap,
                             rec.psi_o, rec.psi_p, rec.status))
    return out
