"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 runtime failure.
Settings are resolved as built-in defaults, then the ``--config`` JSON file,
then command-line flags (flags win).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import harness
from .env import GROUPS, decode_action, make_env
from .errors import ConfigError, IoFailure, RuntimeFailure
from .weather import load_weather, read_epw

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
OUT_ENV_VAR = "HVACRL_OUT"

# flag dest -> config field; flags left unset keep the config value
OVERRIDES = {
    "building": "building", "weather": "weather", "weather_seed": "weather_seed",
    "weather_hours": "weather_hours", "agent": "agent", "episodes": "episodes", "seed": "seed",
    "split_fraction": "split_fraction", "dt": "dt", "temp_width": "temp_width",
    "humidity_width": "humidity_width", "fixed_action": "fixed_action",
}


def _groups(text):
    groups = tuple(g.strip() for g in text.split(",") if g.strip())
    unknown = set(groups) - set(GROUPS)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown group(s) {sorted(unknown)}; choose from {GROUPS}")
    return groups


def _add_config_flags(p):
    d = harness.ExperimentConfig()
    p.add_argument("--config", help="experiment config JSON (see `hvacrl schema`)", default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"experiment seed, overrides the config (config default {d.seed})")
    p.add_argument("--building", "--env", dest="building", choices=("warehouse", "datacenter"), default=argparse.SUPPRESS,
                   help=f"building model (config default {d.building})")
    p.add_argument("--weather", default=argparse.SUPPRESS, help=f"synthetic:hot | synthetic:cool | EPW path (config default {d.weather})")
    p.add_argument("--weather-seed", type=int, default=argparse.SUPPRESS, help=f"synthetic weather seed (config default {d.weather_seed})")
    p.add_argument("--weather-hours", type=int, default=argparse.SUPPRESS, help=f"synthetic weather length in hours (config default {d.weather_hours})")
    p.add_argument("--agent", choices=harness.AGENTS, default=argparse.SUPPRESS,
                   help=f"controller (config default {d.agent})")
    p.add_argument("--episodes", type=int, default=argparse.SUPPRESS, help=f"training episodes (config default {d.episodes})")
    p.add_argument("--split-fraction", type=float, default=argparse.SUPPRESS, help=f"training share of the weather (config default {d.split_fraction})")
    p.add_argument("--dt", type=float, default=argparse.SUPPRESS, help=f"timestep in seconds (config default {d.dt})")
    p.add_argument("--omega", type=float, default=argparse.SUPPRESS, help=f"energy weight of the reward (config default {d.reward.omega})")
    p.add_argument("--groups", type=_groups, default=argparse.SUPPRESS, help="comma-separated observation groups (config default: per agent)")
    p.add_argument("--temp-width", type=float, default=argparse.SUPPRESS, help=f"temperature tile width degC (config default {d.temp_width})")
    p.add_argument("--humidity-width", type=float, default=argparse.SUPPRESS, help=f"humidity tile width %% (config default {d.humidity_width})")
    p.add_argument("--fixed-action", type=int, default=argparse.SUPPRESS, help=f"fixed agent action (config default {d.fixed_action})")
    p.add_argument("--out", default=argparse.SUPPRESS, help=f"output root (default ${OUT_ENV_VAR} or ./runs)")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="hvacrl", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll a constant action and write a per-step trace", formatter_class=fmt)
    p.add_argument("--env", dest="building", choices=("warehouse", "datacenter"), default="warehouse", help="building model")
    p.add_argument("--weather", default="synthetic:hot", help="synthetic:hot | synthetic:cool | EPW path")
    p.add_argument("--action", type=int, default=7, help="action index in [0, 9]")
    p.add_argument("--hours", type=int, default=24, help="simulated horizon in hours")
    p.add_argument("--dt", type=float, default=900.0, help="timestep in seconds")
    p.add_argument("--omega", type=float, default=0.5, help="energy weight of the reward")
    p.add_argument("--seed", type=int, default=0, help="seed for initial zone temperatures and synthetic weather")
    p.add_argument("--out", default=None, help="trace CSV path (default: trace.csv in a new run directory)")

    p = sub.add_parser("train", help="train an agent and evaluate it on held-out weather", formatter_class=fmt)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a saved agent (or the fixed/random baselines)", formatter_class=fmt)
    _add_config_flags(p)
    p.add_argument("--agent-artifact", default=None, help="artifact written by `train` (not needed for fixed/random)")

    p = sub.add_parser("ablate", help="run an ablation suite", formatter_class=fmt)
    p.add_argument("--suite", choices=sorted(harness.SUITES), required=True, help="obs | reward | tiles")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="seeds to run (default: the config seed)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("report", help="aggregate results.csv files into one comparison table", formatter_class=fmt)
    p.add_argument("--dir", required=True, help="directory searched recursively for results.csv")

    p = sub.add_parser("schema", help="print every config field with its default", formatter_class=fmt)
    return parser


def load_config(args):
    data = {}
    path = getattr(args, "config", None)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = harness.ExperimentConfig.from_dict(data)
    changes = {field: getattr(args, dest) for dest, field in OVERRIDES.items() if getattr(args, dest, None) is not None}
    if getattr(args, "groups", None) is not None:
        changes["groups"] = args.groups
    if getattr(args, "omega", None) is not None:
        changes["reward"] = dataclasses.replace(cfg.reward, omega=args.omega)
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    try:
        return cfg.replace(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def output_root(cfg_dir=""):
    return Path(cfg_dir or os.environ.get(OUT_ENV_VAR) or "runs")


def new_run_dir(root, label):
    stamp = time.strftime("%Y%m%dT%H%M%S")
    path = Path(root) / f"{stamp}-{label}"
    n = 1
    while path.exists():
        n += 1
        path = Path(root) / f"{stamp}-{label}-{n}"
    try:
        path.mkdir(parents=True)
    except OSError as exc:
        raise IoFailure(f"cannot create run directory {path}: {exc}") from exc
    return path


def _save_config(cfg, run_dir):
    d = cfg.to_dict()
    d.pop("output_dir")
    (run_dir / "config.json").write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")


def cmd_simulate(args):
    if args.action not in range(10):
        raise ConfigError(f"--action must lie in [0, 9], got {args.action}")
    if args.hours < 1:
        raise ConfigError(f"--hours must be >= 1, got {args.hours}")
    if args.weather.startswith("synthetic:"):
        weather = load_weather(args.weather, seed=args.seed, hours=args.hours + 1)
    else:
        weather = read_epw(args.weather)
        if len(weather) < args.hours + 1:
            raise ConfigError(f"{args.weather} holds {len(weather)} hours, {args.hours + 1} needed")
        weather = weather.slice(0, args.hours + 1)
    reward = harness.RewardParams(omega=args.omega)
    env = make_env(args.building, weather, reward, args.dt, args.seed)
    n_steps = int(round(args.hours * 3600 / args.dt))
    if n_steps > env.episode_length:
        raise ConfigError(f"{args.hours} h is not a whole number of {args.dt} s steps")
    if args.out:
        path = Path(args.out)
    else:
        path = new_run_dir(output_root(), f"simulate-{args.building}") / "trace.csv"
    zones = env.model.zone_names
    cmd = decode_action(env.action_table, args.action)
    header = ["time_s", "T_out"] + [f"T_{z}" for z in zones]
    header += [f"{z}_heating_sp" for z in zones] + [f"{z}_cooling_sp" for z in zones] + ["p_total_w", "reward"]
    env.reset()
    rows = []
    for _ in range(n_steps):
        t_out = float(env._outdoor[0])
        result = env.step(args.action)
        rows.append([result.info["sim_time"], t_out, *env.state.zone_temps, *cmd.heating,
                     *("" if c is None else c for c in cmd.cooling), result.info["p_total"], result.reward])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write trace {path}: {exc}") from exc
    print(path)
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args)
    if cfg.agent not in ("qlearning", "dqn"):
        raise ConfigError(f"train needs agent qlearning or dqn, got {cfg.agent!r}")
    run_dir = new_run_dir(output_root(cfg.output_dir), f"train-{cfg.agent}")
    _save_config(cfg, run_dir)
    record = harness.run(cfg, artifact_dir=run_dir / "artifacts")
    harness.write_results([record], run_dir)
    _print_records([record])
    print(run_dir)
    return EXIT_OK


def cmd_evaluate(args):
    cfg = load_config(args)
    if cfg.agent in ("qlearning", "dqn"):
        if not args.agent_artifact:
            raise ConfigError(f"--agent-artifact is required to evaluate a {cfg.agent} agent")
        agent = harness.load_agent(args.agent_artifact, cfg)
        metrics = harness.evaluate(agent, cfg)
        # content hash rather than path: run directories are timestamped, results must not be
        digest = hashlib.sha256(Path(args.agent_artifact).read_bytes()).hexdigest()
        extras = {"observation_groups": list(cfg.observation_groups), "artifact_sha256": digest}
    else:
        metrics = harness.evaluate(harness.make_agent(cfg), cfg)
        extras = {"observation_groups": list(cfg.observation_groups)}
    record = harness.ResultRecord(cfg.snapshot(), metrics, cfg.seed, extras=extras)
    run_dir = new_run_dir(output_root(cfg.output_dir), f"evaluate-{cfg.agent}")
    _save_config(cfg, run_dir)
    harness.write_results([record], run_dir)
    _print_records([record])
    print(run_dir)
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    run_dir = new_run_dir(output_root(cfg.output_dir), f"ablate-{args.suite}")
    _save_config(cfg, run_dir)
    records = harness.SUITES[args.suite](cfg, seeds=args.seeds, jobs=args.jobs,
                                         artifact_dir=run_dir / "artifacts")
    harness.write_results(records, run_dir)
    _print_records(records)
    print(run_dir)
    return EXIT_OK


def _print_records(records):
    for r in records:
        m = r.metrics
        print(f"{r.run_name}  seed={r.seed}  energy_kwh={m.energy_kwh:.1f}  violation_pct={m.violation_pct:.2f}")


def cmd_report(args):
    root = Path(args.dir)
    if not root.is_dir():
        raise IoFailure(f"{root} is not a directory")
    paths = sorted(root.rglob("results.csv"))
    if not paths:
        raise IoFailure(f"no results.csv found under {root}")
    rows = []
    for path in paths:
        try:
            with open(path, newline="") as fh:
                rows.extend(csv.DictReader(fh))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
    table = harness.aggregate(rows)
    columns = [*harness.REPORT_KEYS, "n_seeds", "energy_kwh", "violation_pct"]
    out = root / "report.csv"
    try:
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(table)
    except OSError as exc:
        raise IoFailure(f"cannot write {out}: {exc}") from exc
    print("  ".join(f"{c:>14}" for c in columns))
    for row in table:
        cells = [f"{row[c]:.2f}" if isinstance(row[c], float) else str(row[c]) for c in columns]
        print("  ".join(f"{c:>14}" for c in cells))
    print(out)
    return EXIT_OK


def cmd_schema(args):
    print(json.dumps(harness.config_schema(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "report": cmd_report, "schema": cmd_schema}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
