"""Ambiguity diagnostics for bilevel leader-follower problems."""

from .config import DEFAULT_TOLERANCES, ToleranceConfig
from .problem import (BilevelInstance, FollowerSet, FunctionObjective, LeaderSet,
                      QuadraticObjective, eval_upper, project_follower, project_leader)
from .lower import solve_eps_extremum, solve_lower
from .diagnostics import (DiagnosticRecord, StatusLabel, ambiguity_premium,
                          fb_stationarity_residual, normalized_ratio, sqrt_rate_scan)
from .pessimistic import (direct_pessimistic_eval, ni_gap, ni_penalized_eval,
                          outer_pessimistic_search)
from .optimistic import multistart_optimistic, run_optimistic
from .frontier import FrontierReport, SweepConfig, build_frontier, evaluate_point
from .cases import case1_instance, case2_instance, load_instance
from .estimators import AmbiguityDiagnostics, FrontierScreen, PessimisticSearch

__version__ = "0.1.0"
