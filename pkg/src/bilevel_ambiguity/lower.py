"""Lower-level value, exact responses, and extrema of F over eps-response sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .config import ToleranceConfig, resolve
from .problem import (BilevelInstance, EvaluationError, QuadraticObjective, SolverFailure,
                      derive_rng)

__all__ = [
    "LowerSolution",
    "EpsExtremum",
    "solve_lower",
    "solve_eps_extremum",
    "level_extremum",
    "strictly_convex_lower",
    "level_support_point",
    "fit_multiplier",
    "level_kkt_residual",
    "projected_gradient",
]


@dataclass(frozen=True)
class LowerSolution:
    phi: float
    y_star: np.ndarray
    kkt_residual: float
    status: str  # "converged" | "incumbent"


@dataclass(frozen=True)
class EpsExtremum:
    value: float
    y: np.ndarray
    sense: str  # "min" | "max"
    feasibility_slack: float
    status: str
    level: float
    kkt_residual: float = float("nan")


def projected_gradient(fun, grad, project, y0, tol=1e-10, max_iter=2000):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    Returns ``(y, f(y), residual, converged)`` where the residual is the
    natural residual ``|y - P(y - grad(y))|``.
    """
    y = project(y0)
    fy = fun(y)
    g = grad(y)
    t = 1.0
    res = float(np.linalg.norm(y - project(y - g)))
    for _ in range(max_iter):
        if res <= tol:
            return y, fy, res, True
        while True:
            y_new = project(y - t * g)
            d = y_new - y
            f_new = fun(y_new)
            # rounding slack: objectives with large constants cancel to ~1e-14
            if f_new <= fy + 1e-4 * float(g @ d) + 1e-13 * (1.0 + abs(fy)) or t < 1e-16:
                break
            t *= 0.5
        if t < 1e-16 and f_new > fy:
            break  # line search failed
        g_new = grad(y_new)
        s = y_new - y
        r = g_new - g
        sr = float(s @ r)
        t = float(s @ s) / sr if sr > 1e-300 else min(4.0 * t, 1e10)
        t = min(max(t, 1e-12), 1e10)
        y, fy, g = y_new, f_new, g_new
        res = float(np.linalg.norm(y - project(y - g)))
        if not np.linalg.norm(s) and res > tol:
            break
    return y, fy, res, res <= tol


def solve_lower(inst: BilevelInstance, x, config: ToleranceConfig | None = None,
                n_starts: Optional[int] = None) -> LowerSolution:
    """Compute ``phi(x) = min_{v in Y} f(x, v)`` and a minimizer.

    Multistart projected gradient from the center of ``Y`` and seeded LHS
    points; the best value wins, ties keep the lowest start index. For
    ``f(x, ·)`` convex the local solve is global.
    """
    cfg = resolve(config)
    inst.require_gradients()
    x = np.asarray(x, dtype=float)
    fset = inst.follower_set
    n_starts = cfg.lower_starts if n_starts is None else n_starts
    starts = [fset.center()]
    if n_starts > 1:
        starts.extend(fset.sample(derive_rng(cfg.seed, "lower", x), n_starts - 1))

    fun = lambda y: inst.f(x, y)
    grad = lambda y: inst.lower.grad_y(x, y)
    best = None
    for y0 in starts:
        try:
            y, fy, res, ok = projected_gradient(fun, grad, fset.project, y0,
                                                cfg.grad_tol, cfg.lower_max_iter)
        except EvaluationError:
            continue
        if best is None or fy < best[1] - 1e-14 * (1.0 + abs(best[1])):
            best = (y, fy, res, ok)
    if best is None:
        raise SolverFailure(f"every lower-level start failed at x={x}")
    y, fy, res, ok = best
    status = "converged" if res <= cfg.kkt_tol else "incumbent"
    return LowerSolution(phi=inst.f(x, y), y_star=y, kkt_residual=res, status=status)


def fit_multiplier(point, grad_obj, grad_con, project, lam_max=None, slack=0.0) -> float:
    """Nonnegative multiplier minimizing the KKT residual.

    Finds ``lam >= 0`` minimizing the norm of
    ``(z - P(z - (grad_obj + lam * grad_con)), lam * slack)`` for the problem
    ``min obj s.t. con <= 0, z in C``, where ``P`` projects onto ``C`` and
    ``slack = max(-con(z), 0)`` carries complementarity.
    """
    point = np.asarray(point, dtype=float)
    slack = max(float(slack), 0.0)

    def resid(lam):
        w = grad_obj + lam * grad_con
        r = point - project(point - w)
        return float(np.sqrt(r @ r + (lam * slack) ** 2))

    if lam_max is None:
        gc = float(np.linalg.norm(grad_con))
        lam_max = 1e3 * (1.0 + float(np.linalg.norm(grad_obj)) / gc) if gc > 0 else 1.0
    # piecewise smooth with plateaus where the projection clips: bracket on a
    # dense grid before refining
    grid = np.unique(np.concatenate([np.linspace(0.0, lam_max, 241),
                                     np.geomspace(1e-10 * lam_max, lam_max, 241)]))
    vals = np.array([resid(g) for g in grid])
    k = int(np.argmin(vals))
    lam, best = float(grid[k]), float(vals[k])
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    if hi > lo:
        out = minimize_scalar(resid, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13 * (1.0 + hi)})
        if resid(float(out.x)) < best:
            lam = float(out.x)
    return lam


def _bisect_to_level(inst, x, anchor, y, level, iters=60):
    """Largest step along ``anchor -> y`` keeping ``f <= level`` (anchor feasible)."""
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inst.f(x, anchor + mid * (y - anchor)) <= level:
            lo = mid
        else:
            hi = mid
    return anchor + lo * (y - anchor)


def _slsqp_level(inst, x, level, obj, obj_grad, y0, cfg):
    """Local solve of ``min obj(y)`` over ``{y in Y : f(x, y) <= level}``."""
    fset = inst.follower_set
    cons = [{
        "type": "ineq",
        "fun": lambda y: np.array([level - inst.f(x, y)]),
        "jac": lambda y: -inst.lower.grad_y(x, y)[None, :],
    }]
    cons.extend(fset.slsqp_constraints())
    try:
        res = minimize(obj, np.asarray(y0, dtype=float), jac=obj_grad, method="SLSQP",
                       bounds=fset.bounds(), constraints=cons,
                       options={"ftol": cfg.slsqp_ftol, "maxiter": cfg.slsqp_maxiter})
    except (EvaluationError, ValueError, FloatingPointError):
        return None, False
    if not np.all(np.isfinite(res.x)):
        return None, False
    return fset.project(res.x), bool(res.success)


def _best_on_level(inst, x, level, obj, obj_grad, anchor, starts, cfg):
    """Multistart driver shared by the extremum and support-point solvers.

    ``anchor`` must satisfy ``f(x, anchor) <= level``; it is always a
    candidate and is the repair target for starts that end infeasible.
    Returns ``(y, objective value, converged flag)``.
    """
    anchor = np.asarray(anchor, dtype=float)
    best_y, best_val, best_ok = anchor, obj(anchor), False
    for y0 in starts:
        y, ok = _slsqp_level(inst, x, level, obj, obj_grad, y0, cfg)
        if y is None:
            continue
        slack = level - inst.f(x, y)
        if slack < -cfg.feas_tol:
            y = _bisect_to_level(inst, x, anchor, y, level)
            ok = False
        val = obj(y)
        if val < best_val - 1e-13 * (1.0 + abs(best_val)):
            best_y, best_val, best_ok = y, val, ok
        elif abs(val - best_val) <= 1e-13 * (1.0 + abs(best_val)) and ok and not best_ok:
            best_ok = True
    return best_y, best_val, best_ok


def level_extremum(inst: BilevelInstance, x, level: float, sense: str, anchor,
                   config: ToleranceConfig | None = None, n_starts: Optional[int] = None,
                   extra_starts=(), stream: str = "eps", kkt: bool = True) -> EpsExtremum:
    """Extremum of ``F(x, ·)`` over ``{y in Y : f(x, y) <= level}``.

    ``anchor`` is a known feasible point (e.g. the exact response). With
    ``kkt`` the status comes from the fitted KKT residual (see
    :func:`level_kkt_residual`); without it, from the solver's own flag.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    sign = 1.0 if sense == "min" else -1.0
    n_starts = cfg.eps_starts if n_starts is None else n_starts
    starts = [np.asarray(anchor, dtype=float)] + [np.asarray(s, dtype=float) for s in extra_starts]
    if n_starts > len(starts):
        rng = derive_rng(cfg.seed, stream, x, [level, sign])
        starts.extend(inst.follower_set.sample(rng, n_starts - len(starts)))

    obj = lambda y: sign * inst.F(x, y)
    obj_grad = (lambda y: sign * inst.upper.grad_y(x, y)) if inst.has_gradients else None
    y, val, ok = _best_on_level(inst, x, level, obj, obj_grad, anchor, starts, cfg)
    slack = level - inst.f(x, y)
    res = float("nan")
    if kkt and inst.has_gradients:
        res = level_kkt_residual(inst, x, y, level, sign)
        ok = res <= cfg.extremum_kkt_tol
    return EpsExtremum(value=sign * val, y=y, sense=sense, feasibility_slack=slack,
                       status="converged" if ok and slack >= -cfg.feas_tol else "incumbent",
                       level=level, kkt_residual=res)


def level_kkt_residual(inst: BilevelInstance, x, y, level: float, sign: float = 1.0) -> float:
    """KKT residual of ``min sign * F(x, ·)`` over ``{y in Y : f(x, y) <= level}``.

    Natural residual at the best-fit multiplier ``lam``, combined with the
    complementarity term ``lam * max(level - f, 0)`` and any infeasibility.
    """
    fset = inst.follower_set
    go = sign * inst.upper.grad_y(x, y)
    gc = inst.lower.grad_y(x, y)
    slack = level - inst.f(x, y)
    lam = fit_multiplier(y, go, gc, fset.project, slack=slack)
    r = y - fset.project(y - (go + lam * gc))
    comp = lam * max(slack, 0.0)
    return float(np.sqrt(r @ r + comp ** 2 + max(-slack, 0.0) ** 2))


def strictly_convex_lower(inst: BilevelInstance) -> bool:
    """True when ``f(x, ·)`` is a quadratic with positive definite ``Q``."""
    low = inst.lower
    if not isinstance(low, QuadraticObjective):
        return False
    eig = np.linalg.eigvalsh(low.Q)
    return bool(eig.min() > 1e-10 * max(1.0, abs(eig).max()))


def solve_eps_extremum(inst: BilevelInstance, x, eps: float, sense: str,
                       lower: LowerSolution | None = None,
                       config: ToleranceConfig | None = None,
                       n_starts: Optional[int] = None, kkt: bool = True) -> EpsExtremum:
    """``min`` or ``max`` of ``F(x, ·)`` over ``S_eps(x) = {y in Y : f(x,y) <= phi(x) + eps}``.

    Parameters
    ----------
    inst : BilevelInstance
    x : array_like
        Leader decision.
    eps : float
        Follower tolerance, ``eps >= 0``.
    sense : {"min", "max"}
        ``"min"`` gives the optimistic value, ``"max"`` the pessimistic one.
    lower : LowerSolution, optional
        Precomputed lower-level solution at ``x``; solved when omitted.

    Returns
    -------
    EpsExtremum
        Best eps-feasible point over ``eps_starts`` local SLSQP solves
        (seeded), always including the exact response ``y*(x)``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    cfg = resolve(config)
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    if eps == 0.0 and strictly_convex_lower(inst):
        # S_0(x) = {y*(x)}: both extrema are F there, no level solve needed
        return EpsExtremum(value=inst.F(np.asarray(x, dtype=float), lower.y_star),
                           y=lower.y_star.copy(), sense=sense, feasibility_slack=0.0,
                           status=lower.status, level=lower.phi,
                           kkt_residual=lower.kkt_residual)
    return level_extremum(inst, x, lower.phi + eps, sense, lower.y_star, cfg, n_starts, kkt=kkt)


def level_support_point(inst: BilevelInstance, x, level: float, direction, anchor,
                        config: ToleranceConfig | None = None) -> np.ndarray:
    """A point of ``{f(x, ·) <= level} ∩ Y`` maximizing ``directionᵀy`` locally."""
    cfg = resolve(config)
    d = np.asarray(direction, dtype=float)
    obj = lambda y: -float(d @ y)
    obj_grad = lambda y: -d
    y, _, _ = _best_on_level(inst, np.asarray(x, dtype=float), level, obj, obj_grad,
                             anchor, [anchor], cfg)
    return y
