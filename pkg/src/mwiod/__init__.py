"""Mobile relay teams that keep a task team connected: robust routing by
second-order cone programming plus a sampling-based relay controller."""

from .channel import ChannelParams, ChannelStats, LinkRates, link_rates, predict_link
from .controller import ControllerParams, ControllerState, controller_step, draw_sample
from .errors import ConfigError, InvalidInputError
from .flows import (FlowSpec, MarginStats, RoutingVars, TeamConfig, margin_stats,
                    min_constraint_value, sample_routing_table)
from .sim import (CirclePatrol, DynamicNetwork, FixedNetwork, MetricsRecord, ScenarioConfig,
                  Waypoints, broadcast_flows, fixed_baseline_positions, run_scenario)
from .socp import (RoutingProblem, RoutingSolution, SolverOptions, build_cone_program,
                   solve_robust_routing, supportable_margin)

__version__ = "0.1.0"
