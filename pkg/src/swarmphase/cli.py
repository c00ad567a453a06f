"""Command-line experiment runner.

Subcommands ``evaluate``, ``optimize``, ``sweep`` and ``bounds`` write
comma-separated tables plus a JSON metadata sidecar (``<out>.meta.json``)
that echoes the full configuration. Settings come from built-in defaults,
then an optional YAML config file, then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
from pathlib import Path

import yaml

from . import __version__
from .evaluation import (
    REPORT_COLUMNS,
    EnumerationCapError,
    PolicyObjective,
    default_workers,
    equal_time_bound,
    equal_time_dynamic_range,
    exact_variance,
    format_value,
    holevo_lower_bound,
    monte_carlo_variance,
    multi_time_dynamic_range,
)
from .model import MeasurementModel
from .protocol import VARIANTS, Schedule, load_policy, make_policy, save_policy
from .pso import ObjectiveError, SwarmConfig, optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

U64_MAX = 2**64 - 1

DEFAULTS = {
    "fd": 0.85,
    "t2": 1000.0,
    "g": 6,
    "f": 2,
    "k": "3",
    "protocol": "cappellaro",
    "protocols": "nonadaptive,cappellaro",
    "policy_file": None,
    "method": "monte_carlo",
    "trials": 1 << 16,
    "train_trials": 1 << 14,
    "seed": 1,
    "validation_seed": 2,
    "workers": None,
    "out": None,
    "particles": 10,
    "iterations": 300,
    "chi": 0.729,
    "c_g": 2.05,
    "c_l": 2.05,
    "tolerance": 1e-4,
    "per_particle_draws": False,
    "cap": 22,
    "n": "",
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config handling


def parse_int_list(text) -> list:
    """``"3"``, ``"1,2,5"`` or ``"1..9"`` (inclusive) to a list of ints."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    text = str(text).strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _as_float(value, name):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _as_seed(value, name):
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an unsigned 64-bit integer") from None
    if not 0 <= seed <= U64_MAX:
        raise ConfigError(f"{name} must be an unsigned 64-bit integer")
    return seed


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat mapping")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve(args) -> dict:
    """Merge defaults, config file and flags, then validate."""
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(load_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value

    cfg["fd"] = _as_float(cfg["fd"], "fd")
    cfg["t2"] = _as_float(cfg["t2"], "t2")
    for key in ("g", "f", "trials", "train_trials", "particles", "iterations", "cap"):
        try:
            cfg[key] = int(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer") from None
    for key in ("chi", "c_g", "c_l", "tolerance"):
        cfg[key] = _as_float(cfg[key], key)
    cfg["seed"] = _as_seed(cfg["seed"], "seed")
    cfg["validation_seed"] = _as_seed(cfg["validation_seed"], "validation_seed")
    cfg["workers"] = default_workers() if cfg["workers"] is None else int(cfg["workers"])
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    try:
        cfg["k"] = parse_int_list(cfg["k"])
        cfg["n"] = parse_int_list(cfg["n"])
    except ValueError as exc:
        raise ConfigError(f"bad integer list: {exc}") from None
    if isinstance(cfg["protocols"], str):
        cfg["protocols"] = [p.strip() for p in cfg["protocols"].split(",") if p.strip()]
    for name in [cfg["protocol"], *cfg["protocols"]]:
        if name not in VARIANTS:
            raise ConfigError(f"unknown protocol {name!r}; choose from {sorted(VARIANTS)}")
    if cfg["method"] not in ("exact", "monte_carlo"):
        raise ConfigError("method must be 'exact' or 'monte_carlo'")
    if cfg["trials"] < 2:
        raise ConfigError("trials must be >= 2")
    if cfg["policy_file"] and not Path(cfg["policy_file"]).is_file():
        raise ConfigError(f"policy file {cfg['policy_file']} does not exist")
    try:
        cfg["model"] = MeasurementModel(cfg["fd"], cfg["t2"])
        cfg["schedules"] = [Schedule(k, cfg["g"], cfg["f"]) for k in cfg["k"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def config_echo(cfg: dict) -> dict:
    echo = {key: cfg[key] for key in DEFAULTS}
    echo["t2"] = format_value(echo["t2"]) if math.isinf(echo["t2"]) else echo["t2"]
    return echo


# --------------------------------------------------------------------------
# output


def table_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_output(cfg, text: str, command: str, out=None, extra=None) -> None:
    out = cfg["out"] if out is None else out
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text)
    write_sidecar(cfg, out, command, extra)


def write_sidecar(cfg, out, command, extra=None) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "workers": cfg["workers"],
        "config": config_echo(cfg),
    }
    if extra:
        meta.update(extra)
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _evaluate_one(cfg, schedule, policy):
    if cfg["method"] == "exact":
        rep = exact_variance(schedule, policy, cfg["model"], cap=cfg["cap"])
    else:
        rep = monte_carlo_variance(schedule, policy, cfg["model"], cfg["trials"], cfg["seed"], cfg["workers"])
    rep.workers = cfg["workers"]
    return rep


# --------------------------------------------------------------------------
# subcommands


def cmd_evaluate(cfg) -> list:
    """Evaluate one protocol (or a saved policy) for each K."""
    if cfg["policy_file"]:
        policy, sched = load_policy(cfg["policy_file"])
        jobs = [(sched, policy)]
    else:
        if not cfg["schedules"]:
            raise ConfigError("no K values given")
        jobs = [(s, make_policy(cfg["protocol"], s)) for s in cfg["schedules"]]
    reports = [_evaluate_one(cfg, s, p) for s, p in jobs]
    text = table_text(REPORT_COLUMNS, [[r.row()[c] for c in REPORT_COLUMNS] for r in reports])
    write_output(cfg, text, "evaluate")
    return reports


def cmd_optimize(cfg) -> dict:
    """Search tree increments with PSO, then validate on a fresh seed."""
    variant = cfg["protocol"]
    if variant not in ("decision_tree", "hybrid"):
        raise ConfigError("optimize needs protocol decision_tree or hybrid")
    if len(cfg["schedules"]) != 1:
        raise ConfigError("optimize takes exactly one K")
    if cfg["out"] is None:
        raise ConfigError("optimize needs --out for the policy file")
    sched = cfg["schedules"][0]
    model = cfg["model"]
    swarm = SwarmConfig(
        chi=cfg["chi"],
        c_g=cfg["c_g"],
        c_l=cfg["c_l"],
        particles=cfg["particles"],
        max_iterations=cfg["iterations"],
        tolerance=cfg["tolerance"],
        per_coordinate_draws=not cfg["per_particle_draws"],
    )
    objective = PolicyObjective(sched, variant, model, cfg["train_trials"])
    result = optimize(objective, swarm, sched.num_parameters, seed=cfg["seed"], eval_seed=cfg["seed"])
    policy = make_policy(variant, sched, result.best_position)
    validation = monte_carlo_variance(sched, policy, model, cfg["trials"], cfg["validation_seed"], cfg["workers"])
    validation.workers = cfg["workers"]

    out = Path(cfg["out"])
    save_policy(
        out,
        policy,
        sched,
        extra={
            "training": {"seed": cfg["seed"], "trials": cfg["train_trials"], "V_H": result.best_value},
            "validation": {
                "seed": cfg["validation_seed"],
                "trials": cfg["trials"],
                "V_H": validation.v_h,
                "std_error": validation.std_error,
            },
        },
    )
    trace_text = table_text(
        ("iteration", "best_value", "mean_value", "spread"),
        [(r.iteration, r.best_value, r.mean_value, r.spread) for r in result.trace],
    )
    Path(str(out) + ".trace.csv").write_text(trace_text)
    report_text = table_text(REPORT_COLUMNS, [[validation.row()[c] for c in REPORT_COLUMNS]])
    Path(str(out) + ".report.csv").write_text(report_text)
    write_sidecar(cfg, out, "optimize", {"evaluations": result.evaluations, "converged": result.converged})
    return {"result": result, "validation": validation, "policy": policy}


def cmd_sweep(cfg) -> list:
    """V_H * N against N for several protocols, with reference curves."""
    if not cfg["schedules"]:
        raise ConfigError("no K values given")
    protocols = list(cfg["protocols"])
    header = ["K", "N"]
    for p in protocols:
        header += [f"{p}_V_H", f"{p}_V_H_N", f"{p}_std_error"]
    header += ["holevo_bound_N", "equal_time_N"]
    rows = []
    for sched in cfg["schedules"]:
        n = sched.total_time()
        row = [sched.K, n]
        for p in protocols:
            rep = _evaluate_one(cfg, sched, make_policy(p, sched))
            row += [rep.v_h, rep.v_h_n, rep.std_error]
        # N * (1/N) is identically 1; write it exactly rather than via rounding
        row += [n * holevo_lower_bound(n), 1.0]
        rows.append(row)
    write_output(cfg, table_text(header, rows), "sweep")
    return [dict(zip(header, r)) for r in rows]


BOUNDS_HEADER = (
    "N",
    "holevo_bound",
    "equal_time_variance",
    "equal_time_dynamic_range",
    "multi_time_dynamic_range",
)


def bounds_rows(n_list) -> list:
    return [
        (n, holevo_lower_bound(n), equal_time_bound(n), equal_time_dynamic_range(n), multi_time_dynamic_range(n))
        for n in n_list
    ]


def cmd_bounds(cfg) -> list:
    """Analytic variance and dynamic-range limits."""
    if any(n < 1 for n in cfg["n"]):
        raise ConfigError("every N must be >= 1")
    rows = bounds_rows(cfg["n"])
    write_output(cfg, table_text(BOUNDS_HEADER, rows), "bounds")
    return rows


COMMANDS = {
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with flat keys matching the long flags")
    common.add_argument("--fd", type=float, help="initial visibility f_d")
    common.add_argument("--t2", type=float, help="coherence time T2 in units of tau ('inf' allowed)")
    common.add_argument("--g", type=int, help="detections at the longest interaction time")
    common.add_argument("--f", type=int, help="extra detections per halving")
    common.add_argument("--k", help="largest stage K: '5', '3,4,5' or '1..9'")
    common.add_argument("--protocol", help=f"one of {', '.join(VARIANTS)}")
    common.add_argument("--protocols", help="comma-separated protocols for sweep")
    common.add_argument("--policy-file", dest="policy_file", help="policy JSON written by optimize")
    common.add_argument("--method", choices=("exact", "monte_carlo"))
    common.add_argument("--trials", type=int, help="Monte Carlo trials (validation trials for optimize)")
    common.add_argument("--train-trials", dest="train_trials", type=int, help="trials per PSO objective call")
    common.add_argument("--seed", type=int, help="master seed (training seed for optimize)")
    common.add_argument("--validation-seed", dest="validation_seed", type=int)
    common.add_argument("--workers", type=int, help="worker threads (default $SWARMPHASE_WORKERS or 1)")
    common.add_argument("--out", help="output path; tables go to stdout when omitted")
    common.add_argument("--particles", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--chi", type=float)
    common.add_argument("--c-g", dest="c_g", type=float)
    common.add_argument("--c-l", dest="c_l", type=float)
    common.add_argument("--tolerance", type=float)
    common.add_argument("--per-particle-draws", dest="per_particle_draws", action="store_true", default=None)
    common.add_argument("--cap", type=int, help="detection cap for exact enumeration")
    common.add_argument("--n", help="N values for bounds: '1,2,100' or '1..10'")

    parser = argparse.ArgumentParser(prog="swarmphase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnumerationCapError, ObjectiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
