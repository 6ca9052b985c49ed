"""Bilevel problem abstraction: feasible sets, objectives and projections.

A :class:`BilevelInstance` bundles the leader objective ``F(x, y)``, the
follower objective ``f(x, y)``, a polyhedral leader set ``X`` (box plus
linear inequalities) and a follower set ``Y`` (box or scaled simplex).
Every solver in the package consumes this type.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .config import ToleranceConfig, resolve

__all__ = [
    "EvaluationError",
    "InfeasibleSetError",
    "InfeasiblePointError",
    "SolverFailure",
    "QuadraticObjective",
    "FunctionObjective",
    "LeaderSet",
    "FollowerSet",
    "BilevelInstance",
    "eval_upper",
    "eval_lower",
    "project_follower",
    "project_leader",
    "project_simplex",
    "check_gradients",
    "derive_rng",
    "latin_hypercube",
]


class EvaluationError(ValueError):
    """An objective returned a non-finite value."""


class InfeasibleSetError(ValueError):
    """A feasible-set descriptor describes an empty or unbounded set."""


class InfeasiblePointError(ValueError):
    """A point lies outside the set it is required to belong to."""


class SolverFailure(RuntimeError):
    """Every start of a local solver failed."""


# ---------------------------------------------------------------------------
# objectives


class QuadraticObjective:
    """``h(x, y) = ½xᵀPx + xᵀRy + ½yᵀQy + pᵀx + qᵀy + k``.

    Both case studies (and the ``custom-quadratic`` config objective) are of
    this form, so gradients are exact.
    """

    has_gradient = True

    def __init__(self, P, R, Q, p, q, k=0.0):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.p = np.asarray(p, dtype=float).ravel()
        self.q = np.asarray(q, dtype=float).ravel()
        self.k = float(k)
        n, m = self.R.shape
        if self.P.shape != (n, n) or self.Q.shape != (m, m):
            raise ValueError("inconsistent quadratic block shapes")
        if self.p.shape != (n,) or self.q.shape != (m,):
            raise ValueError("inconsistent linear term shapes")
        # symmetrize so the gradient formulas hold for any input
        self.P = 0.5 * (self.P + self.P.T)
        self.Q = 0.5 * (self.Q + self.Q.T)

    def __call__(self, x, y):
        return float(
            0.5 * x @ self.P @ x + x @ self.R @ y + 0.5 * y @ self.Q @ y
            + self.p @ x + self.q @ y + self.k
        )

    def grad_x(self, x, y):
        return self.P @ x + self.R @ y + self.p

    def grad_y(self, x, y):
        return self.R.T @ x + self.Q @ y + self.q


class FunctionObjective:
    """Wrap plain callables ``fun(x, y)`` and optional partial gradients."""

    def __init__(self, fun: Callable, grad_x: Optional[Callable] = None,
                 grad_y: Optional[Callable] = None):
        self.fun = fun
        self._gx = grad_x
        self._gy = grad_y

    @property
    def has_gradient(self) -> bool:
        return self._gx is not None and self._gy is not None

    def __call__(self, x, y):
        return float(self.fun(x, y))

    def grad_x(self, x, y):
        if self._gx is None:
            raise NotImplementedError("objective has no x-gradient")
        return np.asarray(self._gx(x, y), dtype=float)

    def grad_y(self, x, y):
        if self._gy is None:
            raise NotImplementedError("objective has no y-gradient")
        return np.asarray(self._gy(x, y), dtype=float)


# ---------------------------------------------------------------------------
# sets


def project_simplex(z: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{y >= 0, sum(y) = total}`` (sort-based)."""
    z = np.asarray(z, dtype=float)
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, z.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


def _ldp_project(z, G, h):
    """Project ``z`` onto ``{x : Gx >= h}`` by least-distance programming.

    Lawson & Hanson's reduction to NNLS; returns ``None`` when the set is
    empty.
    """
    n = z.size
    hz = h - G @ z
    E = np.vstack([G.T, hz[None, :]])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    u, _ = nnls(E, rhs, maxiter=50 * E.shape[1])
    r = E @ u - rhs
    if np.linalg.norm(r) < 1e-12 or r[-1] >= -1e-14:
        return None
    return z - r[:n] / r[-1]


@dataclass(frozen=True)
class LeaderSet:
    """``{x : lo <= x <= hi, A x <= b}``."""

    lo: np.ndarray
    hi: np.ndarray
    A: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise InfeasibleSetError("box bounds have different lengths")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InfeasibleSetError("leader box must be bounded")
        if np.any(lo > hi):
            raise InfeasibleSetError("box bound lo > hi")
        A = np.zeros((0, lo.size)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        if A.shape != (b.size, lo.size):
            raise InfeasibleSetError("inequality rows do not match dimension")
        for name, val in (("lo", lo), ("hi", hi), ("A", A), ("b", b)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if A.shape[0] and _ldp_project(self.center_box(), *self._ge_form()) is None:
            raise InfeasibleSetError("leader set {lo<=x<=hi, Ax<=b} is empty")

    @classmethod
    def from_rows(cls, lo, hi, rows: Sequence[tuple[Sequence[float], float]] = ()):
        rows = list(rows)
        if not rows:
            return cls(lo, hi)
        A = np.array([r[0] for r in rows], dtype=float)
        b = np.array([r[1] for r in rows], dtype=float)
        return cls(lo, hi, A, b)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def has_inequalities(self) -> bool:
        return self.A.shape[0] > 0

    def center_box(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def center(self) -> np.ndarray:
        """Box center projected onto the feasible set."""
        return self.project(self.center_box())

    def _ge_form(self):
        n = self.dim
        G = np.vstack([np.eye(n), -np.eye(n), -self.A])
        h = np.concatenate([self.lo, -self.hi, -self.b])
        return G, h

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = max(0.0, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        if self.has_inequalities:
            v = max(v, float(np.max(self.A @ x - self.b, initial=0.0)))
        return v

    def contains(self, x, tol: float = 1e-10) -> bool:
        return self.violation(x) <= tol

    def project(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if not self.has_inequalities:
            return np.clip(z, self.lo, self.hi)
        if self.contains(z, 0.0):
            return z.copy()
        x = _ldp_project(z, *self._ge_form())
        if x is None:  # unreachable: emptiness is rejected at construction
            raise InfeasibleSetError("leader set is empty")
        return np.clip(x, self.lo, self.hi)


@dataclass(frozen=True)
class FollowerSet:
    """Follower feasible set: a box, or ``{y >= 0, sum(y) = total}``."""

    kind: str
    lo: np.ndarray = None
    hi: np.ndarray = None
    total: float = 1.0
    dim: int = None

    def __post_init__(self):
        if self.kind not in ("box", "simplex"):
            raise InfeasibleSetError(f"unknown follower set kind {self.kind!r}")
        if self.kind == "box":
            lo = np.asarray(self.lo, dtype=float).ravel()
            hi = np.asarray(self.hi, dtype=float).ravel()
            if lo.shape != hi.shape or np.any(lo > hi):
                raise InfeasibleSetError("invalid follower box")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise InfeasibleSetError("follower box must be bounded")
            dim = lo.size
        else:
            if self.dim is None or self.dim < 1:
                raise InfeasibleSetError("simplex follower set needs dim >= 1")
            if not self.total > 0:
                raise InfeasibleSetError("simplex total must be positive")
            dim = int(self.dim)
            lo = np.zeros(dim)
            hi = np.full(dim, float(self.total))
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "dim", dim)

    @classmethod
    def box(cls, lo, hi) -> "FollowerSet":
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def simplex(cls, dim: int, total: float = 1.0) -> "FollowerSet":
        return cls("simplex", total=float(total), dim=dim)

    def project(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "box":
            return np.clip(z, self.lo, self.hi)
        return project_simplex(z, self.total)

    def contains(self, y, tol: float = 1e-12) -> bool:
        y = np.asarray(y, dtype=float)
        if self.kind == "box":
            return bool(np.all(y >= self.lo - tol) and np.all(y <= self.hi + tol))
        return bool(np.all(y >= -tol) and abs(y.sum() - self.total) <= tol)

    def center(self) -> np.ndarray:
        if self.kind == "box":
            return 0.5 * (self.lo + self.hi)
        return np.full(self.dim, self.total / self.dim)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` stratified feasible points (LHS, normalized for the simplex)."""
        u = latin_hypercube(n, self.dim, rng)
        if self.kind == "box":
            return self.lo + u * (self.hi - self.lo)
        # -log of stratified uniforms is a stratified exponential; normalizing
        # exponentials gives a uniform point on the simplex
        e = -np.log1p(-u)
        return self.total * e / e.sum(axis=1, keepdims=True)

    def slsqp_constraints(self, offset: int = 0, size: Optional[int] = None):
        """Equality constraint dicts for SLSQP acting on ``z[offset:offset+dim]``."""
        if self.kind == "box":
            return []
        m = self.dim
        total = self.total
        width = size if size is not None else offset + m

        def fun(z):
            return np.array([z[offset:offset + m].sum() - total])

        jac_row = np.zeros((1, width))
        jac_row[0, offset:offset + m] = 1.0
        return [{"type": "eq", "fun": fun, "jac": lambda z: jac_row}]

    def bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lo.tolist(), self.hi.tolist()))


# ---------------------------------------------------------------------------
# instance


@dataclass(frozen=True)
class BilevelInstance:
    """A parametric bilevel problem ``min_x F(x, y)``, ``y ∈ argmin_v f(x, v)``.

    Parameters
    ----------
    upper, lower : objective
        Callables ``(x, y) -> float`` exposing ``grad_x``/``grad_y`` and a
        ``has_gradient`` flag (see :class:`QuadraticObjective`).
    leader_set : LeaderSet
    follower_set : FollowerSet
    lipschitz_upper_bound : callable, optional
        ``x -> L_F(x)``, a Lipschitz modulus of ``F(x, ·)`` on ``Y``.
    growth_modulus : callable, optional
        ``x -> mu(x)``, quadratic-growth constant of ``f(x, ·)``.
    """

    upper: object
    lower: object
    leader_set: LeaderSet
    follower_set: FollowerSet
    lipschitz_upper_bound: Optional[Callable] = None
    growth_modulus: Optional[Callable] = None
    name: str = "custom"

    @property
    def n(self) -> int:
        return self.leader_set.dim

    @property
    def m(self) -> int:
        return self.follower_set.dim

    @property
    def has_gradients(self) -> bool:
        return bool(getattr(self.upper, "has_gradient", False)
                    and getattr(self.lower, "has_gradient", False))

    def require_gradients(self) -> None:
        if not self.has_gradients:
            raise ValueError(f"instance {self.name!r} has no analytic gradients")

    def F(self, x, y) -> float:
        return _finite(self.upper(x, y), "F")

    def f(self, x, y) -> float:
        return _finite(self.lower(x, y), "f")


def _finite(val, name):
    val = float(val)
    if not np.isfinite(val):
        raise EvaluationError(f"{name} evaluated to {val}")
    return val


def _as_point(z, dim, what):
    z = np.asarray(z, dtype=float).ravel()
    if z.size != dim:
        raise ValueError(f"{what} has dimension {z.size}, expected {dim}")
    return z


def eval_upper(inst: BilevelInstance, x, y) -> float:
    """``F(x, y)``; ``x`` must lie in the leader box."""
    x = _as_point(x, inst.n, "x")
    y = _as_point(y, inst.m, "y")
    if np.any(x < inst.leader_set.lo - 1e-12) or np.any(x > inst.leader_set.hi + 1e-12):
        raise InfeasiblePointError("x lies outside the leader box")
    if not np.all(np.isfinite(y)):
        raise EvaluationError("y is not finite")
    return inst.F(x, y)


def eval_lower(inst: BilevelInstance, x, y) -> float:
    x = _as_point(x, inst.n, "x")
    y = _as_point(y, inst.m, "y")
    return inst.f(x, y)


def project_follower(fset: FollowerSet, z) -> np.ndarray:
    return fset.project(_as_point(z, fset.dim, "z"))


def project_leader(lset: LeaderSet, z) -> np.ndarray:
    return lset.project(_as_point(z, lset.dim, "z"))


# ---------------------------------------------------------------------------
# utilities


def check_gradients(inst: BilevelInstance, n_points: int = 100, seed: int = 0,
                    config: ToleranceConfig | None = None) -> float:
    """Largest relative error of the analytic gradients against central differences.

    Sampled at ``n_points`` random feasible ``(x, y)``. The error of a
    gradient ``g`` against its finite-difference estimate ``d`` is
    ``|g - d| / max(1, |d|)``.
    """
    cfg = resolve(config)
    inst.require_gradients()
    rng = np.random.default_rng(seed)
    h = cfg.fd_step
    lset, fset = inst.leader_set, inst.follower_set
    xs = lset.lo + rng.random((n_points, inst.n)) * (lset.hi - lset.lo)
    xs = np.array([lset.project(x) for x in xs])
    ys = fset.sample(rng, n_points)
    worst = 0.0
    for x, y in zip(xs, ys):
        for obj in (inst.upper, inst.lower):
            for z, grad, other in ((x, obj.grad_x(x, y), "x"), (y, obj.grad_y(x, y), "y")):
                fd = np.empty_like(z)
                for i in range(z.size):
                    e = np.zeros_like(z)
                    e[i] = h
                    if other == "x":
                        fd[i] = (obj(x + e, y) - obj(x - e, y)) / (2 * h)
                    else:
                        fd[i] = (obj(x, y + e) - obj(x, y - e)) / (2 * h)
                err = np.linalg.norm(grad - fd) / max(1.0, np.linalg.norm(fd))
                worst = max(worst, float(err))
    return worst



def derive_rng(seed: int, tag: str, *arrays) -> np.random.Generator:
    """Deterministic generator keyed by ``(seed, tag, arrays)``.

    Streams do not depend on call order, so results are reproducible when
    evaluations are reordered or parallelized.
    """
    key = [zlib.crc32(tag.encode())]
    for a in arrays:
        key.append(zlib.crc32(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes()))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def latin_hypercube(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in ``[0, 1)^dim`` with one point per stratum in every coordinate."""
    if n <= 0:
        return np.zeros((0, dim))
    strata = np.stack([rng.permutation(n) for _ in range(dim)], axis=1)
    return (strata + rng.random((n, dim))) / n
