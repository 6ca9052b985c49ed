"""Pessimistic values by Nikaido-Isoda gap penalization, and the outer search.

For a fixed leader decision ``x`` the pessimistic value is the leader cost
at an equilibrium ``(y, v)`` of the two-player game in which ``v`` solves the
lower level and ``y`` maximizes ``F(x, ·)`` subject to
``f(x, y) <= f(x, v) + eps``. The gap

    N_x(y, v) = [max {F(x, z) : z in Y, f(x, z) <= f(x, v) + eps} - F(x, y)]
                + [f(x, v) - phi(x)]

vanishes exactly at such equilibria and is penalized along an escalating
schedule of weights ``sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .config import ToleranceConfig, resolve
from .lower import (LowerSolution, _bisect_to_level, fit_multiplier, level_extremum,
                    solve_eps_extremum, solve_lower)
from .problem import (BilevelInstance, FollowerSet, FunctionObjective, InfeasiblePointError,
                      LeaderSet, derive_rng)
from .search import lhs_sample, projected_nelder_mead

__all__ = [
    "PessimisticEval",
    "ni_gap",
    "ni_penalized_eval",
    "direct_pessimistic_eval",
    "outer_pessimistic_search",
    "toy_instance",
]


@dataclass
class PessimisticEval:
    """Pessimistic value estimate at one leader decision.

    ``trace`` holds one entry per start with its sigma chain; ``search``
    is filled by :func:`outer_pessimistic_search` with the multistart
    manifest.
    """

    x: np.ndarray
    psi_p: float
    y: np.ndarray
    v: np.ndarray
    ni_gap: float
    sigma_final: float
    starts_used: int
    status: str
    trace: list = field(default_factory=list, repr=False)
    search: Optional[dict] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"x": [float(t) for t in self.x], "psi_p": self.psi_p,
                "y": [float(t) for t in self.y], "v": [float(t) for t in self.v],
                "ni_gap": self.ni_gap, "sigma_final": self.sigma_final,
                "starts_used": self.starts_used, "status": self.status,
                "trace": self.trace, "search": self.search}


def _max_on_level(inst, x, level, anchor, starts, cfg, n_random=0, stream="ni"):
    """Inner supremum of ``F(x, ·)`` on ``{f(x, ·) <= level}``."""
    extra = [np.asarray(s, dtype=float) for s in starts]
    return level_extremum(inst, x, level, "max", anchor, cfg,
                          n_starts=1 + len(extra) + n_random, extra_starts=extra,
                          stream=stream, kkt=False)


def ni_gap(inst: BilevelInstance, x, y, v, eps: float, lower: LowerSolution | None = None,
           config: ToleranceConfig | None = None, warm: Sequence = (),
           n_starts: int | None = None, stream: str = "ni") -> float:
    """Nikaido-Isoda gap ``N_x(y, v)``.

    Both inner suprema are local multistart solves (the second one is
    ``f(x, v) - phi(x)``). The gap is nonnegative only for coupling-feasible
    ``y``, so such ``y`` are rejected.

    Raises
    ------
    InfeasiblePointError
        If ``f(x, y) > f(x, v) + eps`` beyond ``feas_tol``.
    """
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    level = inst.f(x, v) + eps
    if inst.f(x, y) > level + cfg.feas_tol:
        raise InfeasiblePointError("y violates the coupling constraint f(x, y) <= f(x, v) + eps")
    return _gap_and_response(inst, x, y, v, eps, lower, cfg, warm, n_starts, stream)[0]


def _gap_and_response(inst, x, y, v, eps, lower, cfg, warm=(), n_starts=None, stream="ni"):
    """NI gap together with the maximizer of the inner supremum."""
    n_starts = cfg.eps_starts if n_starts is None else n_starts
    starts = [y, lower.y_star, *warm]
    hat = _max_on_level(inst, x, inst.f(x, v) + eps, v, starts, cfg,
                        n_random=max(0, n_starts - len(starts) - 1), stream=stream)
    gap = (hat.value - inst.F(x, y)) + (inst.f(x, v) - lower.phi)
    return _clamp_gap(gap, cfg.ni_clamp), hat.y


def _clamp_gap(gap, tol):
    return 0.0 if -tol <= gap < 0.0 else float(gap)


class _PenalizedObjective:
    """``-F(x, y) + sigma [N_x(y, v)]_+`` on ``z = (y, v)`` with a warm inner max.

    The inner maximum is taken at level ``max(f(x, v) + eps, f(x, y))`` so
    that ``F(x, y)`` never exceeds it: off the coupling set the gap stays
    nonnegative and continuous, and on it nothing changes. Derivatives of
    the inner max use the envelope theorem, moving with its level at rate
    ``lam_hat``, the fitted multiplier of the level constraint.
    """

    def __init__(self, inst, x, eps, lower, cfg):
        self.inst, self.x, self.eps, self.lower, self.cfg = inst, x, eps, lower, cfg
        self.m = inst.m
        self.sigma = 1.0
        self.warm = lower.y_star
        self._memo: dict[bytes, tuple] = {}

    def inner(self, y, v):
        """``(max value, lam_hat, level set by y)`` for the pair ``(y, v)``."""
        inst, x = self.inst, self.x
        fy, fv = inst.f(x, y), inst.f(x, v)
        by_y = fy > fv + self.eps
        level = fy if by_y else fv + self.eps
        key = np.float64(level).tobytes()
        if key not in self._memo:
            hat = _max_on_level(inst, x, level, self.lower.y_star, [self.warm, y], self.cfg)
            lam = fit_multiplier(hat.y, -inst.upper.grad_y(x, hat.y),
                                 inst.lower.grad_y(x, hat.y), inst.follower_set.project,
                                 slack=hat.feasibility_slack)
            if len(self._memo) > 64:
                self._memo.clear()
            self._memo[key] = (hat, lam)
            self.warm = hat.y
        hat, lam = self._memo[key]
        return max(hat.value, inst.F(x, y)), lam, by_y

    def split(self, z):
        fset = self.inst.follower_set
        return fset.project(z[:self.m]), fset.project(z[self.m:])

    def gap(self, y, v):
        top, _, _ = self.inner(y, v)
        return (top - self.inst.F(self.x, y)) + (self.inst.f(self.x, v) - self.lower.phi)

    def __call__(self, z):
        y, v = self.split(z)
        return -self.inst.F(self.x, y) + self.sigma * max(self.gap(y, v), 0.0)

    def grad(self, z):
        inst, x = self.inst, self.x
        y, v = self.split(z)
        gF = inst.upper.grad_y(x, y)
        if self.gap(y, v) <= 0.0:
            return np.concatenate([-gF, np.zeros(self.m)])
        _, lam, by_y = self.inner(y, v)
        gfy, gfv = inst.lower.grad_y(x, y), inst.lower.grad_y(x, v)
        if by_y:
            gy = -gF + self.sigma * (lam * gfy - gF)
            gv = self.sigma * gfv
        else:
            gy = -(1.0 + self.sigma) * gF
            gv = self.sigma * (lam + 1.0) * gfv
        return np.concatenate([gy, gv])


def _coupling_constraints(inst, x, eps, m):
    def fun(z):
        return np.array([inst.f(x, z[m:]) + eps - inst.f(x, z[:m])])

    def jac(z):
        return np.concatenate([-inst.lower.grad_y(x, z[:m]), inst.lower.grad_y(x, z[m:])])[None, :]

    fset = inst.follower_set
    cons = [{"type": "ineq", "fun": fun, "jac": jac}]
    cons += fset.slsqp_constraints(0, 2 * m)
    cons += fset.slsqp_constraints(m, 2 * m)
    return cons


_REFINE_ROUNDS = 2


def _sigma_chain(obj: _PenalizedObjective, z0, cons, bounds, cfg, sigmas):
    """Warm-started solves along ``sigmas``; steps that raise the gap are rejected."""
    inst, x, eps, m = obj.inst, obj.x, obj.eps, obj.m
    y, v = obj.split(np.asarray(z0, dtype=float))
    best = None
    chain = []
    for sigma in sigmas:
        obj.sigma = sigma
        z_start = np.concatenate([y, v]) if best is None else np.concatenate(best[:2])
        try:
            res = minimize(obj, z_start, jac=obj.grad, method="SLSQP", bounds=bounds,
                           constraints=cons,
                           options={"ftol": cfg.slsqp_ftol, "maxiter": cfg.slsqp_maxiter})
            yn, vn = obj.split(res.x)
            solved = bool(res.success)
        except (ValueError, FloatingPointError):
            yn, vn, solved = z_start[:m], z_start[m:], False
        level = inst.f(x, vn) + eps
        if inst.f(x, yn) > level + cfg.feas_tol:
            # v is always coupling-feasible for itself
            yn = _bisect_to_level(inst, x, vn, yn, level)
        g = _clamp_gap(obj.gap(yn, vn), cfg.ni_clamp)
        accepted = best is None or g <= best[2]
        if accepted:
            best = (yn, vn, g, sigma)
        chain.append({"sigma": float(sigma), "gap": float(best[2]), "trial_gap": float(g),
                      "F": float(inst.F(x, best[0])), "accepted": accepted,
                      "solver_ok": solved})
        if best[2] <= cfg.ni_gap_tol:
            break
    return best, chain


def ni_penalized_eval(inst: BilevelInstance, x, eps: float,
                      config: ToleranceConfig | None = None, n_starts: int | None = None,
                      sigmas: Sequence[float] | None = None,
                      lower: LowerSolution | None = None) -> PessimisticEval:
    """Pessimistic value by NI-gap penalization with sigma escalation.

    For each start and each ``sigma`` in the ascending schedule, locally
    minimizes ``-F(x, y) + sigma [N_x(y, v)]_+`` over ``(y, v) in Y x Y``
    (SLSQP, coupling constraint kept hard, inner supremum warm-started),
    stopping the schedule once the gap is at most ``ni_gap_tol``. The
    chosen start is then re-certified with a full multistart gap. When
    the certificate finds a better response to ``v`` than the warm local
    solve did, that response replaces ``y`` if its certified gap is smaller
    (at most twice).

    Selection prefers certified gaps within tolerance (largest ``F``);
    otherwise the smallest gap wins and the status is ``incumbent``.

    Notes
    -----
    Start 0 is ``(y*, y*)``; the others are Latin-hypercube pairs in
    ``Y x Y`` from a stream keyed by ``(seed, x, eps)``.
    """
    cfg = resolve(config)
    inst.require_gradients()
    x = np.asarray(x, dtype=float)
    n_starts = cfg.ni_starts if n_starts is None else n_starts
    sigmas = tuple(cfg.ni_sigmas if sigmas is None else sigmas)
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    m = inst.m
    fset = inst.follower_set
    starts = [np.concatenate([lower.y_star, lower.y_star])]
    if n_starts > 1:
        rng = derive_rng(cfg.seed, "ni-starts", x, [eps])
        ys = fset.sample(rng, n_starts - 1)
        vs = fset.sample(rng, n_starts - 1)
        starts.extend(np.concatenate([a, b]) for a, b in zip(ys, vs))
    cons = _coupling_constraints(inst, x, eps, m)
    bounds = fset.bounds() * 2

    results = []
    for k, z0 in enumerate(starts):
        obj = _PenalizedObjective(inst, x, eps, lower, cfg)
        (y, v, g, sigma), chain = _sigma_chain(obj, z0, cons, bounds, cfg, sigmas)
        cert, y_hat = _gap_and_response(inst, x, y, v, eps, lower, cfg, warm=[obj.warm],
                                        stream="ni-certify")
        refine = []
        for _ in range(_REFINE_ROUNDS):
            if cert <= cfg.ni_gap_tol:
                break
            # the warm local inner max missed a better response to v; try it
            cert2, y_next = _gap_and_response(inst, x, y_hat, v, eps, lower, cfg,
                                              warm=[obj.warm], stream="ni-certify")
            accepted = cert2 < cert
            refine.append({"y": [float(t) for t in y_hat], "certified_gap": cert2,
                           "F": float(inst.F(x, y_hat)), "accepted": accepted})
            if not accepted:
                break
            y, cert, y_hat = y_hat, cert2, y_next
        results.append({"start": k, "y": y, "v": v, "gap": cert, "chain_gap": g,
                        "sigma": sigma, "F": inst.F(x, y), "chain": chain, "refine": refine})

    def key(r):
        ok = r["gap"] <= cfg.ni_gap_tol
        return (0, -r["F"], r["start"]) if ok else (1, r["gap"], -r["F"], r["start"])

    best = min(results, key=key)
    trace = [{"start": r["start"], "z0": [float(t) for t in starts[r["start"]]],
              "sigma_chain": r["chain"], "refine": r["refine"], "final_gap": r["gap"], "final_F": r["F"],
              "status": "converged" if r["gap"] <= cfg.ni_gap_tol else "incumbent"}
             for r in results]
    return PessimisticEval(
        x=x, psi_p=float(best["F"]), y=best["y"], v=best["v"], ni_gap=float(best["gap"]),
        sigma_final=float(best["sigma"]), starts_used=len(starts),
        status="converged" if best["gap"] <= cfg.ni_gap_tol else "incumbent", trace=trace)


def direct_pessimistic_eval(inst: BilevelInstance, x, eps: float,
                            config: ToleranceConfig | None = None,
                            lower: LowerSolution | None = None) -> PessimisticEval:
    """Pessimistic value from the direct constrained maximum, gap-certified at ``(y_max, y*)``."""
    cfg = resolve(config)
    x = np.asarray(x, dtype=float)
    if lower is None:
        lower = solve_lower(inst, x, cfg)
    hi = solve_eps_extremum(inst, x, eps, "max", lower, cfg)
    gap = ni_gap(inst, x, hi.y, lower.y_star, eps, lower=lower, config=cfg,
                 stream="ni-certify")
    ok = hi.status == "converged" and gap <= cfg.ni_gap_tol
    return PessimisticEval(x=x, psi_p=hi.value, y=hi.y, v=lower.y_star, ni_gap=gap,
                           sigma_final=float("nan"), starts_used=cfg.eps_starts,
                           status="converged" if ok else "incumbent")


def outer_pessimistic_search(inst: BilevelInstance, eps: float,
                             config: ToleranceConfig | None = None, n_starts: int = 8,
                             max_fevals: Optional[int] = 400, inner: str = "direct",
                             certify: str = "ni", starts: Sequence | None = None,
                             seed: int | None = None):
    """Minimize ``x -> psi_p(x)`` over the leader set by projected Nelder-Mead.

    Parameters
    ----------
    inner : {"direct", "ni"}
        Evaluation used inside the search. ``"direct"`` is the constrained
        maximum; ``"ni"`` runs the full penalized evaluation at every trial
        point and is far slower.
    certify : {"ni", "direct"}
        Evaluation of the returned point.
    starts : sequence, optional
        Explicit start points. By default the leader-set center and
        ``n_starts - 1`` Latin-hypercube points.

    Returns
    -------
    x_best : ndarray
    evaluation : PessimisticEval
        With ``search`` holding per-start records and the run status.
    """
    if inner not in ("direct", "ni") or certify not in ("direct", "ni"):
        raise ValueError("inner and certify must be 'direct' or 'ni'")
    cfg = resolve(config)
    lset = inst.leader_set
    seed = cfg.seed if seed is None else seed
    if starts is None:
        starts = [lset.center()]
        if n_starts > 1:
            starts.extend(lhs_sample(lset, n_starts - 1, seed))

    def psi_p(x):
        if inner == "direct":
            lower = solve_lower(inst, x, cfg)
            return solve_eps_extremum(inst, x, eps, "max", lower, cfg,
                                      n_starts=cfg.search_starts, kkt=False).value
        return ni_penalized_eval(inst, x, eps, cfg).psi_p

    res = projected_nelder_mead(psi_p, lset, starts, max_fevals, cfg)
    x = res.x
    if certify == "ni":
        ev = ni_penalized_eval(inst, x, eps, cfg)
    else:
        ev = direct_pessimistic_eval(inst, x, eps, cfg)
    status = "converged" if res.status == "converged" and ev.status == "converged" else "incumbent"
    ev.search = {"inner": inner, "certify": certify, "n_starts": len(res.runs),
                 "max_fevals": max_fevals, "best_start": res.best_run,
                 "search_status": res.status, "status": status,
                 "runs": [r.to_dict() for r in res.runs]}
    ev.status = status
    return x, ev


def toy_instance(x_lo: float = -2.0, x_hi: float = 2.0, y_lo: float = -4.0,
                 y_hi: float = 4.0) -> BilevelInstance:
    """One-dimensional test instance ``f = (y - x)^2``, ``F = (x - 1)^2 + y``.

    The eps-response set is ``[x - sqrt(eps), x + sqrt(eps)]`` (inside
    ``Y``), so ``psi_p(x) = (x - 1)^2 + x + sqrt(eps)`` with unique
    minimizer ``x = 0.5``.
    """
    upper = FunctionObjective(lambda x, y: (x[0] - 1.0) ** 2 + y[0],
                              grad_x=lambda x, y: np.array([2.0 * (x[0] - 1.0)]),
                              grad_y=lambda x, y: np.array([1.0]))
    lower = FunctionObjective(lambda x, y: (y[0] - x[0]) ** 2,
                              grad_x=lambda x, y: np.array([-2.0 * (y[0] - x[0])]),
                              grad_y=lambda x, y: np.array([2.0 * (y[0] - x[0])]))
    return BilevelInstance(upper=upper, lower=lower,
                           leader_set=LeaderSet([x_lo], [x_hi]),
                           follower_set=FollowerSet.box([y_lo], [y_hi]),
                           lipschitz_upper_bound=lambda x: 1.0,
                           growth_modulus=lambda x: 1.0, name="toy")
