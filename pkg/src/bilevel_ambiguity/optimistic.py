"""Optimistic candidate generation by proximal alternating linearization.

Each iteration solves

    min  F(x, y) + tau/2 |x - x_k|^2 + tau/2 |y - y_k|^2
    s.t. x in X, y in Y,
         f(x, y) <= f(x_k, v_k) + grad_x f(x_k, v_k)^T (x - x_k) + eps

and then refreshes the exact lower response ``v = argmin_Y f(x, ·)``. The
run stops when the step, the tolerance violation ``r_LL`` and the
stationarity residual ``g_stat`` all fall below ``tol``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .config import ToleranceConfig, resolve
from .diagnostics import fb_stationarity_residual, ll_residual
from .lower import fit_multiplier, solve_eps_extremum, solve_lower
from .problem import BilevelInstance, InfeasiblePointError, SolverFailure
from .search import lhs_sample

__all__ = [
    "ProximalState",
    "OptimisticRunReport",
    "SubproblemFailure",
    "proximal_subproblem",
    "run_optimistic",
    "multistart_optimistic",
]


class SubproblemFailure(SolverFailure):
    """Linearized subproblem could not be solved; carries the state snapshot."""

    def __init__(self, message: str, state: "ProximalState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class ProximalState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    lam: float
    tau: float
    iter: int
    phi: float


@dataclass
class OptimisticRunReport:
    """Outcome of one proximal run.

    ``trace`` has one row per iteration: ``iter, step, r_ll, g_stat, F``
    and the subproblem objective before and after the step.
    """

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    lam: float
    iterations: int
    step: float
    r_ll: float
    g_stat: float
    F: float
    status: str
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path: str | Path) -> None:
        cols = ["iter", "step", "r_ll", "g_stat", "F"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.trace:
                w.writerow([row["iter"]] + [f"{row[c]:.6g}" for c in cols[1:]])


def _joint_project(inst):
    n = inst.n

    def project(z):
        return np.concatenate([inst.leader_set.project(z[:n]), inst.follower_set.project(z[n:])])

    return project


def proximal_subproblem(inst: BilevelInstance, state: ProximalState, eps: float,
                        config: ToleranceConfig | None = None):
    """One linearized proximal step.

    Solved with SLSQP over ``(x, y)``; the coupling multiplier is the
    nonnegative least-squares fit of the subproblem's KKT residual at the
    returned point.

    Returns
    -------
    x_next, y_next : ndarray
    lam : float
    """
    cfg = resolve(config)
    inst.require_gradients()
    n, m = inst.n, inst.m
    xk, yk, vk, tau = state.x, state.y, state.v, state.tau
    f0 = inst.f(xk, vk)
    gx0 = inst.lower.grad_x(xk, vk)
    zk = np.concatenate([xk, yk])

    def obj(z):
        x, y = z[:n], z[n:]
        d = z - zk
        return inst.F(x, y) + 0.5 * tau * float(d @ d)

    def obj_grad(z):
        x, y = z[:n], z[n:]
        return np.concatenate([inst.upper.grad_x(x, y), inst.upper.grad_y(x, y)]) + tau * (z - zk)

    def con(z):
        x, y = z[:n], z[n:]
        return np.array([f0 + gx0 @ (x - xk) + eps - inst.f(x, y)])

    def con_jac(z):
        x, y = z[:n], z[n:]
        return np.concatenate([gx0 - inst.lower.grad_x(x, y), -inst.lower.grad_y(x, y)])[None, :]

    cons = [{"type": "ineq", "fun": con, "jac": con_jac}]
    lset = inst.leader_set
    if lset.has_inequalities:
        A, b = lset.A, lset.b
        cons.append({"type": "ineq", "fun": lambda z: b - A @ z[:n],
                     "jac": lambda z: np.hstack([-A, np.zeros((A.shape[0], m))])})
    cons += inst.follower_set.slsqp_constraints(n, n + m)
    bounds = list(zip(lset.lo.tolist(), lset.hi.tolist())) + inst.follower_set.bounds()
    project = _joint_project(inst)
    try:
        res = minimize(obj, zk, jac=obj_grad, method="SLSQP", bounds=bounds, constraints=cons,
                       options={"ftol": cfg.slsqp_ftol, "maxiter": cfg.slsqp_maxiter})
    except (ValueError, FloatingPointError) as exc:
        raise SubproblemFailure(f"proximal subproblem failed: {exc}", state) from exc
    z = project(res.x)
    if con(z)[0] < -cfg.feas_tol or not lset.contains(z[:n], cfg.feas_tol):
        # the current point is feasible whenever v_k is exact
        if con(zk)[0] >= -cfg.feas_tol:
            z = zk.copy()
        else:
            raise SubproblemFailure("linearized coupling constraint infeasible", state)
    slack = con(z)[0]
    lam = fit_multiplier(z, obj_grad(z), -con_jac(z)[0], project, slack=slack)
    return z[:n], z[n:], lam


def run_optimistic(inst: BilevelInstance, eps: float, x0, config: ToleranceConfig | None = None,
                   y0=None, tau: float | None = None, max_iter: int | None = None,
                   tol: float | None = None) -> OptimisticRunReport:
    """Proximal alternating linearization from ``x0``.

    Parameters
    ----------
    x0 : array_like
        Feasible leader start.
    y0 : array_like, optional
        Follower start; defaults to the optimistic response at ``x0``.
    tau, max_iter, tol : optional
        Override ``prox_tau``, ``prox_max_iter`` and ``prox_tol``.

    Returns
    -------
    OptimisticRunReport
        ``converged`` only when ``max(step, r_LL, g_stat) <= tol`` at the
        final iterate; reaching the iteration cap gives ``incumbent``.
    """
    cfg = resolve(config)
    tau = cfg.prox_tau if tau is None else tau
    max_iter = cfg.prox_max_iter if max_iter is None else max_iter
    tol = cfg.prox_tol if tol is None else tol
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x0, dtype=float)
    if not inst.leader_set.contains(x, cfg.feas_tol):
        raise InfeasiblePointError("x0 is not in the leader set")
    lower = solve_lower(inst, x, cfg)
    if y0 is None:
        y = solve_eps_extremum(inst, x, eps, "min", lower, cfg, kkt=False).y
    else:
        y = inst.follower_set.project(np.asarray(y0, dtype=float))
    state = ProximalState(x, y, lower.y_star, 0.0, tau, 0, lower.phi)
    trace = []
    step = r_ll = g = np.inf
    status = "incumbent"
    for k in range(1, max_iter + 1):
        before = inst.F(state.x, state.y)
        x_new, y_new, lam = proximal_subproblem(inst, state, eps, cfg)
        lower = solve_lower(inst, x_new, cfg)
        dz = np.concatenate([x_new - state.x, y_new - state.y])
        step = float(np.linalg.norm(dz))
        r_ll = ll_residual(inst, x_new, y_new, eps, lower.phi)
        g = fb_stationarity_residual(inst, x_new, y_new, lower.y_star, lam, eps)
        F_new = inst.F(x_new, y_new)
        trace.append({"iter": k, "step": step, "r_ll": r_ll, "g_stat": g, "F": F_new,
                      "sub_before": before, "sub_after": F_new + 0.5 * tau * step ** 2,
                      "start_feasible": _start_feasible(inst, state, eps, cfg)})
        state = ProximalState(x_new, y_new, lower.y_star, lam, tau, k, lower.phi)
        if max(step, r_ll, g) <= tol:
            status = "converged"
            break
    return OptimisticRunReport(x=state.x, y=state.y, v=state.v, lam=state.lam,
                               iterations=state.iter, step=step, r_ll=r_ll, g_stat=g,
                               F=inst.F(state.x, state.y), status=status, trace=trace)


def _start_feasible(inst, state: ProximalState, eps, cfg) -> bool:
    """Whether the current pair satisfies its own linearized constraint."""
    return inst.f(state.x, state.y) <= inst.f(state.x, state.v) + eps + cfg.feas_tol


def multistart_optimistic(inst: BilevelInstance, eps: float, n_starts: int = 8,
                          config: ToleranceConfig | None = None,
                          starts: Optional[Sequence] = None,
                          seed: int | None = None) -> list[OptimisticRunReport]:
    """Runs from the leader-set center plus Latin-hypercube starts.

    Returns the reports in start order; the caller picks the best.
    """
    cfg = resolve(config)
    if starts is None:
        lset = inst.leader_set
        starts = [lset.center()]
        if n_starts > 1:
            starts.extend(lhs_sample(lset, n_starts - 1, cfg.seed if seed is None else seed))
    return [run_optimistic(inst, eps, s, cfg) for s in starts]
