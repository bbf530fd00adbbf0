"""Command line entry point: ``mwiod run | solve-once | validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .channel import ChannelParams
from .errors import ConfigError, InvalidInputError
from .flows import TeamConfig, constraint_values, min_constraint_value
from .scenario_io import (MetricsWriter, _build, _check_keys, _json_safe, _points, dumps_snapshot,
                          load_scenario, load_yaml, parse_flows, parse_scenario, parse_solver,
                          snapshot_dict)
from .sim import SolverFailure, iter_scenario, network_positions
from .socp import (OPTIMAL, RoutingProblem, build_cone_program, solve_robust_routing,
                   supportable_margin)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("mwiod")


def _fail(code: int, msg: str) -> int:
    print(f"mwiod: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        cfg, opts = load_scenario(args.scenario, seed=args.seed)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
        if args.dump_cone:
            (out / "cones").mkdir(exist_ok=True)
    except OSError as e:
        return _fail(EXIT_CONFIG, f"cannot create output directory: {e}")

    p = cfg.task_trajectory.p
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = MetricsWriter(fh)
        try:
            for step, rec in enumerate(iter_scenario(cfg, opts)):
                writer.write(rec)
                if args.snapshots:
                    (out / "snapshots" / f"{step:04d}.json").write_text(
                        dumps_snapshot(snapshot_dict(rec)), encoding="utf-8")
                if args.dump_cone:
                    team = TeamConfig(rec.positions, tuple(range(p)),
                                      tuple(range(p, len(rec.positions))))
                    prob = RoutingProblem.build(team, cfg.flows, cfg.channel, cfg.r_min)
                    (out / "cones" / f"{step:04d}.txt").write_text(
                        build_cone_program(prob, opts.free_slack).to_text(), encoding="utf-8")
        except SolverFailure as e:
            return _fail(EXIT_SOLVER, f"{e}; partial results kept in {out}")
    return EXIT_OK


def _static_problem(raw: dict) -> RoutingProblem:
    """Routing problem from a ``positions`` section, or from t = 0 of a scenario."""
    if "positions" in raw:
        pos = _check_keys("positions", raw["positions"], {"task", "network"})
        x_task = _points("positions.task", pos.get("task", []))
        x_net = _points("positions.network", pos.get("network", []))
        if "flows" not in raw:
            raise ConfigError("scenario: missing section 'flows'")
        channel = _build("channel", ChannelParams,
                         _check_keys("channel", raw.get("channel", {}),
                                     set(ChannelParams.__dataclass_fields__)))
        flows = parse_flows(raw["flows"], len(x_task))
        r_min = float(raw.get("r_min", 1e-4))
    else:
        cfg, _ = parse_scenario(raw)
        x_task = cfg.task_trajectory.positions(0.0)
        x_net = network_positions(cfg.network_mode)
        channel, flows, r_min = cfg.channel, cfg.flows, cfg.r_min
    try:
        return RoutingProblem.build(TeamConfig.from_teams(x_task, x_net), flows, channel, r_min)
    except InvalidInputError as e:
        raise ConfigError(str(e)) from None


def _alpha_entries(alpha) -> list[tuple[int, int, int, float]]:
    a = alpha.alpha
    idx = np.argwhere(a > 0)
    entries = [(int(k), int(i), int(j), float(a[i, j, k])) for i, j, k in idx]
    entries.sort(key=lambda e: (-e[3], e[0], e[1], e[2]))
    return entries


def cmd_solve_once(args) -> int:
    try:
        raw = load_yaml(args.scenario)
        prob = _static_problem(raw)
        opts = parse_solver(raw.get("solver"))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    if args.dump_cone:
        text = build_cone_program(prob, opts.free_slack).to_text()
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "cone.txt").write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)

    sol = solve_robust_routing(prob, opts)
    report = {"status": sol.status, "slack": sol.slack}
    if sol.status == OPTIMAL:
        report["nu"] = min_constraint_value(sol.alpha, prob.rates, prob.team, prob.flows)
        report["alpha"] = [{"flow": k, "from": i, "to": j, "value": v}
                           for k, i, j, v in _alpha_entries(sol.alpha)]
    else:
        scale, best = supportable_margin(prob, options=opts)
        vals = constraint_values(best.alpha, prob.rates, prob.team, prob.flows)
        binding = sorted(vals.items(), key=lambda kv: kv[1])[:5]
        report["supported_scale"] = scale
        report["binding_pairs"] = [{"node": i, "flow": k, "score": v} for (i, k), v in binding]

    if args.json:
        print(json.dumps(_json_safe(report), sort_keys=True, indent=1))
    else:
        print(f"status: {report['status']}")
        print(f"slack: {report['slack']:.6f}")
        if sol.status == OPTIMAL:
            print(f"nu: {report['nu']:.6f}")
            print("routing (flow: from -> to = fraction):")
            for e in report["alpha"]:
                print(f"  {e['flow']}: {e['from']} -> {e['to']} = {e['value']:.6f}")
        else:
            print(f"supportable demand scale: {report['supported_scale']:.4f}")
            print("tightest constraints at that scale (node, flow, score):")
            for e in report["binding_pairs"]:
                print(f"  {e['node']}, {e['flow']}, {e['score']:.6f}")
    if sol.status != OPTIMAL:
        return _fail(EXIT_SOLVER, f"routing problem is {sol.status}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg, _ = load_scenario(args.scenario, seed=args.seed)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    print(f"ok: {cfg.task_trajectory.p} task agents, "
          f"{len(network_positions(cfg.network_mode))} network agents, "
          f"{len(cfg.flows)} flows, {cfg.n_steps} steps")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwiod",
                                     description="Robust routing and relay placement simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write metrics")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--snapshots", action="store_true", help="write snapshots/NNNN.json")
    run.add_argument("--dump-cone", action="store_true", help="write cones/NNNN.txt")
    run.set_defaults(func=cmd_run)

    once = sub.add_parser("solve-once", help="solve routing for one static configuration")
    once.add_argument("--scenario", required=True)
    once.add_argument("--out", default=None)
    once.add_argument("--json", action="store_true")
    once.add_argument("--dump-cone", action="store_true")
    once.set_defaults(func=cmd_solve_once)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", required=True)
    val.add_argument("--seed", type=int, default=None)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
