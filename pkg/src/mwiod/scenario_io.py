"""Scenario files (YAML) and result writers (CSV metrics, JSON snapshots)."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, TextIO

import numpy as np
import yaml

from .channel import ChannelParams
from .controller import ControllerParams
from .errors import ConfigError, InvalidInputError
from .flows import FlowSpec
from .sim import (CirclePatrol, DynamicNetwork, FixedNetwork, MetricsRecord, ScenarioConfig,
                  Waypoints, broadcast_flows, fixed_baseline_positions)
from .socp import SolverOptions

METRICS_SCHEMA_VERSION = 1

_TOP_KEYS = {"channel", "flows", "task_trajectory", "network_mode", "agent_speed_limit", "dt",
             "duration", "seed", "r_min", "bisection_steps", "solver", "positions"}


def _check_keys(section: str, d: Any, allowed: set[str]) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")
    return d


def _points(section: str, v) -> np.ndarray:
    try:
        arr = np.asarray(v, dtype=float).reshape(-1, 2)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: expected a list of [x, y] points ({e})") from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{section}: positions must be finite")
    return arr


def _build(section: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except InvalidInputError as e:
        raise ConfigError(f"{section}: {e}") from None
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from None


def parse_flows(raw, p: int) -> tuple[FlowSpec, ...]:
    if isinstance(raw, dict):
        _check_keys("flows", raw, {"broadcast"})
        b = _check_keys("flows.broadcast", raw["broadcast"], {"margin", "confidence"})
        try:
            return broadcast_flows(p, float(b["margin"]), float(b["confidence"]))
        except InvalidInputError as e:
            raise ConfigError(f"flows.broadcast: {e}") from None
        except KeyError as e:
            raise ConfigError(f"flows.broadcast: missing {e}") from None
    if not isinstance(raw, list) or not raw:
        raise ConfigError("flows: expected a non-empty list or a broadcast template")
    out = []
    for k, f in enumerate(raw):
        _check_keys(f"flow {k}", f, {"sources", "destinations", "margin", "confidence"})
        out.append(_build(f"flow {k}", FlowSpec, f))
    return tuple(out)


def parse_trajectory(raw) -> CirclePatrol | Waypoints:
    _check_keys("task_trajectory", raw, {"circle_patrol", "waypoints"})
    if len(raw) != 1:
        raise ConfigError("task_trajectory: give exactly one of circle_patrol, waypoints")
    if "circle_patrol" in raw:
        c = dict(_check_keys("task_trajectory.circle_patrol", raw["circle_patrol"],
                             {"radius", "center", "angular_speed", "phases"}))
        if "center" in c:
            c["center"] = tuple(float(v) for v in c["center"])
        if "phases" in c:
            c["phases"] = tuple(float(v) for v in c["phases"])
        return _build("task_trajectory.circle_patrol", CirclePatrol, c)
    tracks = raw["waypoints"]
    try:
        tracks = tuple(tuple((float(t), float(x), float(y)) for t, x, y in tr) for tr in tracks)
    except (TypeError, ValueError):
        raise ConfigError("task_trajectory.waypoints: expected per-agent lists of [t, x, y]") from None
    if not tracks or any(not tr for tr in tracks):
        raise ConfigError("task_trajectory.waypoints: every agent needs at least one waypoint")
    return Waypoints(tracks)


def _net_positions(section: str, d: dict, key: str, radius: float) -> np.ndarray:
    if key in d:
        return _points(f"{section}.{key}", d[key])
    if "pattern" in d:
        return fixed_baseline_positions(d["pattern"], float(d.get("radius_scale", 0.5)), radius)
    raise ConfigError(f"{section}: give {key} or pattern")


def parse_network(raw, patrol_radius: float) -> DynamicNetwork | FixedNetwork:
    _check_keys("network_mode", raw, {"dynamic", "fixed"})
    if len(raw) != 1:
        raise ConfigError("network_mode: give exactly one of dynamic, fixed")
    if "fixed" in raw:
        d = _check_keys("network_mode.fixed", raw["fixed"], {"positions", "pattern", "radius_scale"})
        return FixedNetwork(_net_positions("network_mode.fixed", d, "positions", patrol_radius))
    d = _check_keys("network_mode.dynamic", raw["dynamic"],
                    {"initial_positions", "pattern", "radius_scale", "controller"})
    ctl = _check_keys("network_mode.dynamic.controller", d.get("controller", {}),
                      {"max_it", "sample_stddev", "collision_dist", "seed"})
    params = _build("network_mode.dynamic.controller", ControllerParams, ctl)
    x = _net_positions("network_mode.dynamic", d, "initial_positions", patrol_radius)
    return DynamicNetwork(x, params)


def parse_solver(raw) -> SolverOptions:
    d = _check_keys("solver", raw or {}, {"backend", "gap_tol", "feas_tol", "max_iter", "free_slack"})
    return _build("solver", SolverOptions, d)


def parse_scenario(raw: dict, seed: int | None = None) -> tuple[ScenarioConfig, SolverOptions]:
    _check_keys("scenario", raw, _TOP_KEYS)
    for key in ("flows", "task_trajectory", "network_mode"):
        if key not in raw:
            raise ConfigError(f"scenario: missing section {key!r}")
    channel = _build("channel", ChannelParams,
                     _check_keys("channel", raw.get("channel", {}),
                                 {f.name for f in ChannelParams.__dataclass_fields__.values()}))
    traj = parse_trajectory(raw["task_trajectory"])
    radius = traj.radius if isinstance(traj, CirclePatrol) else 20.0
    flows = parse_flows(raw["flows"], traj.p)
    network = parse_network(raw["network_mode"], radius)
    scalars = {}
    for key, typ in (("agent_speed_limit", float), ("dt", float), ("duration", float),
                     ("seed", int), ("r_min", float), ("bisection_steps", int)):
        if key in raw:
            try:
                scalars[key] = typ(raw[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected {typ.__name__}") from None
    if seed is not None:
        scalars["seed"] = seed
    cfg = ScenarioConfig(channel, flows, traj, network, **scalars)
    try:
        cfg.validate()
    except InvalidInputError as e:
        raise ConfigError(str(e)) from None
    return cfg, parse_solver(raw.get("solver"))


def load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read scenario file: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"scenario file is not valid YAML: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must contain a mapping at the top level")
    return raw


def load_scenario(path, seed: int | None = None) -> tuple[ScenarioConfig, SolverOptions]:
    return parse_scenario(load_yaml(path), seed)


# ---- writers ----

def _fmt(v: float) -> str:
    return repr(float(v))


def metrics_header(rec: MetricsRecord) -> list[str]:
    cols = ["schema_version", "t"]
    for k, i in rec.source_keys:
        cols += [f"b_mean_f{k}_n{i}", f"b_std_f{k}_n{i}"]
    cols += ["avg_margin", "supported_scale", "slack", "nu", "feasible", "status"]
    for j in range(len(rec.positions)):
        cols += [f"x{j}", f"y{j}"]
    return cols


def metrics_row(rec: MetricsRecord) -> list[str]:
    row = [str(METRICS_SCHEMA_VERSION), _fmt(rec.t)]
    for m, s in zip(rec.source_mean, rec.source_std):
        row += [_fmt(m), _fmt(s)]
    row += [_fmt(rec.avg_margin), _fmt(rec.supported_scale), _fmt(rec.slack), _fmt(rec.nu),
            str(int(rec.feasible)), rec.status]
    for x, y in rec.positions:
        row += [_fmt(x), _fmt(y)]
    return row


class MetricsWriter:
    """Streams records to CSV; the header is written with the first record."""

    def __init__(self, fh: TextIO):
        self._fh = fh
        self._w = csv.writer(fh, lineterminator="\n")
        self._header = None

    def write(self, rec: MetricsRecord) -> None:
        if self._header is None:
            self._header = metrics_header(rec)
            self._w.writerow(self._header)
        self._w.writerow(metrics_row(rec))
        self._fh.flush()


def write_metrics_csv(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = MetricsWriter(fh)
        for r in records:
            w.write(r)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def snapshot_dict(rec: MetricsRecord) -> dict:
    return {
        "t": rec.t,
        "positions": rec.positions.tolist(),
        "targets": None if rec.targets is None else rec.targets.tolist(),
        "routing": rec.alpha.to_json(),
        "slack": rec.slack,
        "nu": rec.nu,
        "feasible": rec.feasible,
        "supported_scale": rec.supported_scale,
        "status": rec.status,
        "flags": list(rec.flags),
    }


def dumps_snapshot(d: dict) -> str:
    return json.dumps(_json_safe(d), sort_keys=True, indent=1) + "\n"
