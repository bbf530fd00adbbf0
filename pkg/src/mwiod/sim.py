"""Closed-loop scenario engine.

Per step: move the task team along its trajectory, run the controller (or
keep a fixed network team), record routing and source margins, then move
relays toward their targets under a speed limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .channel import DEFAULT_R_MIN, ChannelParams, link_rates
from .controller import ControllerParams, ControllerState, collision_free, controller_step
from .errors import ConfigError, InvalidInputError
from .flows import (FlowSpec, RoutingVars, TeamConfig, margin_arrays, min_constraint_value,
                    validate_flows)
from .socp import (NUMERICAL_FAILURE, OPTIMAL, RoutingProblem, RoutingSolution, SolverOptions,
                   solve_robust_routing, supportable_margin)


class SolverFailure(RuntimeError):
    def __init__(self, t: float, records: list):
        super().__init__(f"routing solver failed at t={t:g}")
        self.t = t
        self.records = records


@dataclass(frozen=True)
class CirclePatrol:
    radius: float = 20.0
    center: tuple[float, float] = (0.0, 0.0)
    angular_speed: float = 0.05
    phases: tuple[float, ...] = (0.0, 2 * math.pi / 3, 4 * math.pi / 3)

    def positions(self, t: float) -> np.ndarray:
        th = np.asarray(self.phases, dtype=float) + self.angular_speed * t
        return np.c_[self.center[0] + self.radius * np.cos(th),
                     self.center[1] + self.radius * np.sin(th)]

    @property
    def p(self) -> int:
        return len(self.phases)


@dataclass(frozen=True)
class Waypoints:
    """Per-agent lists of (t, x, y), linearly interpolated and held at the ends."""

    tracks: tuple[tuple[tuple[float, float, float], ...], ...]

    def positions(self, t: float) -> np.ndarray:
        out = []
        for track in self.tracks:
            arr = np.asarray(track, dtype=float)
            out.append([np.interp(t, arr[:, 0], arr[:, 1]), np.interp(t, arr[:, 0], arr[:, 2])])
        return np.asarray(out)

    @property
    def p(self) -> int:
        return len(self.tracks)


@dataclass(frozen=True)
class DynamicNetwork:
    initial_positions: np.ndarray
    controller: ControllerParams = ControllerParams()


@dataclass(frozen=True)
class FixedNetwork:
    positions: np.ndarray


Trajectory = Union[CirclePatrol, Waypoints]
NetworkMode = Union[DynamicNetwork, FixedNetwork]


@dataclass(frozen=True)
class ScenarioConfig:
    channel: ChannelParams
    flows: tuple[FlowSpec, ...]
    task_trajectory: Trajectory
    network_mode: NetworkMode
    agent_speed_limit: float = 2.0
    dt: float = 1.0
    duration: float = 300.0
    seed: int = 0
    r_min: float = DEFAULT_R_MIN
    bisection_steps: int = 10

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.duration >= 0:
            raise ConfigError("duration must be >= 0")
        if not self.agent_speed_limit >= 0:
            raise ConfigError("agent_speed_limit must be >= 0")
        if isinstance(self.task_trajectory, CirclePatrol) and not self.task_trajectory.radius > 0:
            raise ConfigError("patrol radius must be > 0")
        if not self.flows:
            raise ConfigError("at least one flow is required")
        x_net = network_positions(self.network_mode)
        if len(x_net) < 1:
            raise ConfigError("network team needs at least one agent")
        try:
            team = TeamConfig.from_teams(self.task_trajectory.positions(0.0), x_net)
            validate_flows(team, self.flows)
        except InvalidInputError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from None
        if isinstance(self.network_mode, DynamicNetwork):
            if not collision_free(team.positions, self.network_mode.controller.collision_dist):
                raise ConfigError("initial configuration violates the collision distance")


def network_positions(mode: NetworkMode) -> np.ndarray:
    x = mode.initial_positions if isinstance(mode, DynamicNetwork) else mode.positions
    return np.asarray(x, dtype=float).reshape(-1, 2)


def broadcast_flows(p: int, margin: float, confidence: float) -> tuple[FlowSpec, ...]:
    """Flow k goes from task agent k to every other task agent."""
    return tuple(FlowSpec((k,), tuple(j for j in range(p) if j != k), margin, confidence)
                 for k in range(p))


def fixed_baseline_positions(pattern: str, radius_scale: float = 0.5, patrol_radius: float = 20.0,
                             center=(0.0, 0.0), phase: float = 0.0) -> np.ndarray:
    """Static relay layouts: ``center``, ``centered_triangle``, ``pentagon_plus_center``.

    Polygon vertices sit at ``radius_scale * patrol_radius`` from the center,
    the first one at angle ``phase``.
    """
    c = np.asarray(center, dtype=float)
    r = radius_scale * patrol_radius

    def ring(k):
        th = phase + 2 * np.pi * np.arange(k) / k
        return c + r * np.c_[np.cos(th), np.sin(th)]

    if pattern == "center":
        return c.reshape(1, 2).copy()
    if pattern == "centered_triangle":
        return ring(3)
    if pattern == "pentagon_plus_center":
        return np.vstack([ring(5), c])
    raise ConfigError(f"unknown baseline pattern {pattern!r}")


@dataclass
class MetricsRecord:
    t: float
    source_keys: list[tuple[int, int]]       # (flow, source node)
    source_mean: list[float]
    source_std: list[float]
    avg_margin: float
    slack: float
    nu: float
    feasible: bool
    supported_scale: float
    status: str
    positions: np.ndarray
    alpha: RoutingVars
    targets: np.ndarray | None = None
    sample_failures: int = 0
    flags: list[str] = field(default_factory=list)


def _record(t, team: TeamConfig, flows: Sequence[FlowSpec], channel: ChannelParams, r_min: float,
            sol: RoutingSolution, scale: float, feasible: bool) -> MetricsRecord:
    rates = link_rates(channel, team.positions, r_min)
    mean, var = margin_arrays(sol.alpha, rates)
    keys, means, stds = [], [], []
    for k, f in enumerate(flows):
        for i in f.sources:
            keys.append((k, i))
            means.append(float(mean[i, k]))
            stds.append(float(np.sqrt(var[i, k])))
    nu = min_constraint_value(sol.alpha, rates, team, flows)
    return MetricsRecord(t=t, source_keys=keys, source_mean=means, source_std=stds,
                         avg_margin=float(np.mean(means)), slack=float(sol.slack), nu=float(nu),
                         feasible=feasible, supported_scale=scale, status=sol.status,
                         positions=team.positions.copy(), alpha=sol.alpha)


def _step_toward(x, target, max_step):
    d = target - x
    dist = np.linalg.norm(d, axis=1, keepdims=True)
    scale = np.where(dist > max_step, max_step / np.where(dist > 0, dist, 1.0), 1.0)
    return x + d * scale


def iter_scenario(cfg: ScenarioConfig, options: SolverOptions | None = None
                  ) -> Iterator[MetricsRecord]:
    """Yield one record per step; raises ``SolverFailure`` on a numerical failure."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    mode = cfg.network_mode
    x_net = network_positions(mode)
    state = None
    if isinstance(mode, DynamicNetwork):
        state = ControllerState.initial(x_net, mode.controller, rng)
    flows = cfg.flows
    done: list[MetricsRecord] = []

    for step in range(cfg.n_steps):
        t = (step + 1) * cfg.dt
        x_task = cfg.task_trajectory.positions(t)
        team = TeamConfig.from_teams(x_task, x_net)
        failures = 0
        if state is not None:
            state, _, info = controller_step(state, x_net, x_task, mode.controller, cfg.channel,
                                             flows, cfg.r_min, options)
            sol = info.solution
            failures = info.sample_failures
        else:
            sol = solve_robust_routing(RoutingProblem.build(team, flows, cfg.channel, cfg.r_min),
                                       options)
        feasible = sol.status == OPTIMAL
        scale = 1.0
        if not feasible:
            # report what the configuration can support instead of zeros
            prob = RoutingProblem.build(team, flows, cfg.channel, cfg.r_min)
            scale, sol = supportable_margin(prob, cfg.bisection_steps, options)
            if sol.status == NUMERICAL_FAILURE:
                raise SolverFailure(t, done)
        rec = _record(t, team, flows, cfg.channel, cfg.r_min, sol, scale, feasible)
        rec.sample_failures = failures
        if failures:
            rec.flags.append("sample_rejections")
        if not feasible:
            rec.flags.append("infeasible")
        if state is not None:
            rec.targets = state.target_config.copy()
            x_net = _step_toward(x_net, state.target_config, cfg.agent_speed_limit * cfg.dt)
        done.append(rec)
        yield rec


def run_scenario(cfg: ScenarioConfig, options: SolverOptions | None = None) -> list[MetricsRecord]:
    return list(iter_scenario(cfg, options))
