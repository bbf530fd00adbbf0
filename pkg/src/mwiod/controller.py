"""Sampling-based local controller for the network team.

Each call re-solves routing at the current and at the target network
configuration, then scores random nearby configurations with the
min-constraint value of the *current* routing. No cone program is solved
inside the sampling loop.

The benchmark a candidate must beat is the better of the re-solved target
routing and the routing that got the target adopted, both scored at the
present task positions. With a static task team the benchmark therefore
never decreases.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .channel import DEFAULT_R_MIN, ChannelParams, link_rates
from .errors import InvalidInputError
from .flows import FlowSpec, RoutingVars, TeamConfig, min_constraint_value
from .socp import RoutingProblem, RoutingSolution, SolverOptions, solve_robust_routing

log = logging.getLogger(__name__)

MAX_SAMPLE_ATTEMPTS = 100


@dataclass(frozen=True)
class ControllerParams:
    max_it: int = 20
    sample_stddev: float = 1.0
    collision_dist: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_it < 0:
            raise InvalidInputError("max_it must be >= 0")
        if not self.sample_stddev >= 0:
            raise InvalidInputError("sample_stddev must be >= 0")
        if not self.collision_dist > 0:
            raise InvalidInputError("collision_dist must be > 0")


@dataclass
class ControllerState:
    target_config: np.ndarray
    rng: np.random.Generator
    last_alpha: RoutingVars | None = None
    last_alpha_star: RoutingVars | None = None
    # Routing whose score justified the current target; keeps the benchmark
    # from dropping when the re-solved routing scores the target lower.
    target_alpha: RoutingVars | None = None

    @classmethod
    def initial(cls, x_net, params: ControllerParams, rng: np.random.Generator | None = None):
        x = np.array(x_net, dtype=float).reshape(-1, 2)
        return cls(x, rng if rng is not None else np.random.default_rng(params.seed))


@dataclass
class StepInfo:
    """Diagnostics from one controller call."""

    solution: RoutingSolution
    target_solution: RoutingSolution
    benchmark: float
    final_benchmark: float
    adopted: int
    sample_failures: int

    @property
    def feasible(self) -> bool:
        return self.solution.ok


def collision_free(positions, collision_dist: float) -> bool:
    x = np.asarray(positions, dtype=float)
    return len(x) < 2 or bool(pdist(x).min() > collision_dist)


def draw_sample(x_net, x_task, params: ControllerParams,
                rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Perturb every relay by an isotropic normal; reject until collision free.

    Returns ``(candidate, ok)``. After ``MAX_SAMPLE_ATTEMPTS`` rejections the
    unperturbed ``x_net`` comes back with ``ok = False``.
    """
    x_net = np.asarray(x_net, dtype=float).reshape(-1, 2)
    x_task = np.asarray(x_task, dtype=float).reshape(-1, 2)
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        cand = x_net + params.sample_stddev * rng.standard_normal(x_net.shape)
        if collision_free(np.vstack([x_task, cand]), params.collision_dist):
            return cand, True
    log.warning("draw_sample: %d rejections, keeping current configuration", MAX_SAMPLE_ATTEMPTS)
    return x_net.copy(), False


def score(alpha: RoutingVars, team: TeamConfig, flows: Sequence[FlowSpec],
          channel: ChannelParams, r_min: float) -> float:
    return min_constraint_value(alpha, link_rates(channel, team.positions, r_min), team, flows)


def controller_step(state: ControllerState, x_net, x_task, params: ControllerParams,
                    channel: ChannelParams, flows: Sequence[FlowSpec],
                    r_min: float = DEFAULT_R_MIN,
                    options: SolverOptions | None = None
                    ) -> tuple[ControllerState, RoutingVars, StepInfo]:
    """One pass of the local controller.

    Returns the updated state, the routing to use right now (for the current
    configuration), and diagnostics. An infeasible current configuration
    yields zero routing; the search still runs but every zero-routing score
    is a sentinel, so nothing is adopted.
    """
    x_net = np.asarray(x_net, dtype=float).reshape(-1, 2)
    x_task = np.asarray(x_task, dtype=float).reshape(-1, 2)
    if state.target_config.shape != x_net.shape:
        raise InvalidInputError("target configuration and network team differ in size")
    current = TeamConfig.from_teams(x_task, x_net)
    target = current.with_network(state.target_config)

    sol = solve_robust_routing(RoutingProblem.build(current, flows, channel, r_min), options)
    sol_star = solve_robust_routing(RoutingProblem.build(target, flows, channel, r_min), options)
    alpha = sol.alpha
    v_star = score(sol_star.alpha, target, flows, channel, r_min)
    keep = sol_star.alpha
    if state.target_alpha is not None:
        v_keep = score(state.target_alpha, target, flows, channel, r_min)
        if v_keep > v_star:
            v_star, keep = v_keep, state.target_alpha
    benchmark = v_star

    best = state.target_config
    adopted = failures = 0
    for _ in range(params.max_it):
        cand, ok = draw_sample(x_net, x_task, params, state.rng)
        failures += not ok
        v_p = score(alpha, current.with_network(cand), flows, channel, r_min)
        if v_p > v_star:
            best, v_star, keep = cand, v_p, alpha
            adopted += 1

    new_state = dataclasses.replace(state, target_config=np.array(best), last_alpha=alpha,
                                    last_alpha_star=sol_star.alpha, target_alpha=keep)
    info = StepInfo(sol, sol_star, benchmark, v_star, adopted, failures)
    return new_state, alpha, info
