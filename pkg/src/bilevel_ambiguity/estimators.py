"""Estimator-style wrappers over the functional core.

Rows of ``X`` are leader decisions. The wrappers hold settings as
constructor parameters (so ``get_params``/``set_params``/``clone`` work)
and delegate every computation to the functional API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import resolve
from .diagnostics import ambiguity_premium
from .frontier import SweepConfig, build_frontier, dominance_mask, evaluate_point
from .pessimistic import direct_pessimistic_eval, ni_penalized_eval, outer_pessimistic_search

__all__ = ["AmbiguityDiagnostics", "FrontierScreen", "PessimisticSearch"]


def _check_points(X, n: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2 or X.shape[1] != n:
        raise ValueError(f"expected leader points with {n} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("leader points must be finite")
    return X


class AmbiguityDiagnostics(TransformerMixin, BaseEstimator):
    """Map leader decisions to ``(psi_o, psi_p, delta, rho)``.

    Parameters
    ----------
    instance : BilevelInstance
    eps : float
        Follower tolerance.
    config : ToleranceConfig, optional
    certify : bool
        Evaluate the Nikaido-Isoda gap at each pessimistic maximizer.

    Attributes
    ----------
    records_ : list of DiagnosticRecord
        Records from the most recent ``transform``.
    """

    def __init__(self, instance=None, eps: float = 0.1, config=None, certify: bool = True):
        self.instance = instance
        self.eps = eps
        self.config = config
        self.certify = certify

    def fit(self, X=None, y=None):
        if self.instance is None:
            raise ValueError("an instance is required")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        self.n_features_in_ = self.instance.n
        if X is not None:
            _check_points(X, self.n_features_in_)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_points(X, self.n_features_in_)
        cfg = resolve(self.config)
        self.records_ = [ambiguity_premium(self.instance, x, self.eps, cfg,
                                           certify=self.certify)[1] for x in X]
        return np.array([[r.psi_o, r.psi_p, r.delta, r.rho] for r in self.records_])

    def get_feature_names_out(self, input_features=None):
        return np.array(["psi_o", "psi_p", "delta", "rho"], dtype=object)


class FrontierScreen(BaseEstimator):
    """Build a robustness-efficiency frontier and screen decisions against it.

    ``fit(X)`` runs the sweep and the Latin-hypercube fill, with the rows
    of ``X`` (if any) evaluated as heuristic benchmarks. ``predict(X)``
    returns 1 for decisions not dominated by any point of the fitted
    frontier and 0 otherwise.
    """

    def __init__(self, instance=None, eps: float = 0.1, J: int = 21, n_lhs: int = 80,
                 seed: int = 7, n_starts: int = 5, max_fevals=400, certify: str = "ni",
                 config=None):
        self.instance = instance
        self.eps = eps
        self.J = J
        self.n_lhs = n_lhs
        self.seed = seed
        self.n_starts = n_starts
        self.max_fevals = max_fevals
        self.certify = certify
        self.config = config

    def _sweep(self) -> SweepConfig:
        return SweepConfig(J=self.J, n_lhs=self.n_lhs, eps=self.eps, seed=self.seed,
                           n_starts=self.n_starts, max_fevals=self.max_fevals,
                           certify=self.certify)

    def fit(self, X=None, y=None, labels=None):
        if self.instance is None:
            raise ValueError("an instance is required")
        self.n_features_in_ = self.instance.n
        heur = [] if X is None else list(_check_points(X, self.n_features_in_))
        self.frontier_ = build_frontier(self.instance, self.eps, self._sweep(), heur,
                                        resolve(self.config),
                                        heuristic_labels=labels or ())
        return self

    def evaluate(self, X) -> np.ndarray:
        """``(psi_o, delta)`` for each row, without filtering."""
        check_is_fitted(self, "frontier_")
        X = _check_points(X, self.n_features_in_)
        cfg = resolve(self.config)
        pts = [evaluate_point(self.instance, x, self.eps, "external", cfg, index=k)
               for k, x in enumerate(X)]
        return np.array([[p.psi_o, p.delta] for p in pts])

    def predict(self, X) -> np.ndarray:
        ud = self.evaluate(X)
        ref = np.array([[p.psi_o, p.delta] for p in self.frontier_.points])
        tol = resolve(self.config).dominance_tol
        out = np.empty(len(ud), dtype=int)
        for k, (u, d) in enumerate(ud):
            mask = dominance_mask(np.append(ref[:, 0], u), np.append(ref[:, 1], d), tol)
            out[k] = 0 if mask[-1] else 1
        return out


class PessimisticSearch(BaseEstimator):
    """Outer minimization of the pessimistic value over the leader set.

    ``fit`` stores the best decision in ``x_`` and its evaluation in
    ``evaluation_``; ``predict(X)`` returns pessimistic values at ``X``
    by the route named in ``inner`` (``"direct"`` or ``"ni"``).
    """

    def __init__(self, instance=None, eps: float = 0.1, n_starts: int = 8, max_fevals=400,
                 inner: str = "direct", seed: int = 7, config=None):
        self.instance = instance
        self.eps = eps
        self.n_starts = n_starts
        self.max_fevals = max_fevals
        self.inner = inner
        self.seed = seed
        self.config = config

    def fit(self, X=None, y=None):
        if self.instance is None:
            raise ValueError("an instance is required")
        if self.inner not in ("direct", "ni"):
            raise ValueError("inner must be 'direct' or 'ni'")
        self.n_features_in_ = self.instance.n
        starts = None if X is None else list(_check_points(X, self.n_features_in_))
        self.x_, self.evaluation_ = outer_pessimistic_search(
            self.instance, self.eps, resolve(self.config), n_starts=self.n_starts,
            max_fevals=self.max_fevals, inner=self.inner, starts=starts, seed=self.seed)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "x_")
        X = _check_points(X, self.n_features_in_)
        cfg = resolve(self.config)
        ev = ni_penalized_eval if self.inner == "ni" else direct_pessimistic_eval
        return np.array([ev(self.instance, x, self.eps, cfg).psi_p for x in X])
