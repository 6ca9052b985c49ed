"""Centralized numerical tolerances and solver settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class ToleranceConfig:
    """Every tolerance, iteration cap, schedule and seed used by the solvers.

    Instances are immutable; use :meth:`replace` to derive variants.
    """

    seed: int = 7

    # lower-level projected gradient
    grad_tol: float = 1e-10
    lower_max_iter: int = 2000
    lower_starts: int = 5
    kkt_tol: float = 1e-8

    # eps-constrained extrema (SLSQP)
    eps_starts: int = 8
    feas_tol: float = 1e-8
    slsqp_ftol: float = 1e-12
    slsqp_maxiter: int = 500
    extremum_kkt_tol: float = 1e-6

    # projections
    projection_tol: float = 1e-10

    # diagnostics
    clamp_tol: float = 1e-9
    diam_samples: int = 64
    indifference_tol: float = 1e-12

    # pessimistic NI penalization
    ni_sigmas: tuple[float, ...] = (10.0, 100.0, 1000.0, 10000.0)
    ni_starts: int = 5
    ni_gap_tol: float = 1e-6
    ni_clamp: float = 1e-10

    # optimistic proximal scheme
    prox_tau: float = 2.0
    prox_max_iter: int = 120
    prox_tol: float = 1e-6

    # derivative-free outer search
    nm_simplex_tol: float = 1e-6
    search_starts: int = 4  # eps-extremum starts inside search objectives
    nm_fatol: float = 1e-10

    # frontier
    dominance_tol: float = 1e-9

    # gradient checks
    fd_step: float = 1e-6
    grad_rtol: float = 1e-5

    def replace(self, **changes: Any) -> "ToleranceConfig":
        if "ni_sigmas" in changes:
            changes["ni_sigmas"] = tuple(float(s) for s in changes["ni_sigmas"])
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ni_sigmas"] = list(self.ni_sigmas)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ToleranceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls().replace(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ToleranceConfig":
        """Load from a TOML or JSON file.

        A ``[tolerances]`` table (TOML) or ``"tolerances"`` key (JSON) is used
        when present, so a run manifest can be fed back directly.
        """
        data = load_mapping(path)
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        if "tolerances" in data:
            data = data["tolerances"]
        return cls.from_dict(data)


DEFAULT_TOLERANCES = ToleranceConfig()


def load_mapping(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    with path.open("rb") as fh:
        return tomllib.load(fh)


def resolve(config: ToleranceConfig | None) -> ToleranceConfig:
    return DEFAULT_TOLERANCES if config is None else config
