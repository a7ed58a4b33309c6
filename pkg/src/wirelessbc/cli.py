"""Command-line entry point: ``wirelessbc {analyze,simulate,sweep,compare,e2e}``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 numerical
failure, 5 model/simulation disagreement. Output files are written only
once a command has finished, so a failed run leaves no partial output.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import _Loader, ConfigError, RunConfig, load, load_recipe, recipe_names, with_overrides
from .forks import ForkDivergenceError
from .pipeline import (RESULT_COLUMNS, compare_point, e2e_rows, e2e_summary, evaluate,
                       point_configs, run_sweep, simulate)
from .queue import ConvergenceError, ModelInconsistencyError, SaturationError
from .sim import write_trace
from .wlan import FrameTooLongError, InfeasibleLinkError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4, 5
NUMERIC_ERRORS = (SaturationError, ConvergenceError, ModelInconsistencyError, ForkDivergenceError,
                  InfeasibleLinkError, FrameTooLongError, ArithmeticError)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _columns(rows, lead=()):
    cols = list(lead)
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    return cols


class _Outputs:
    """Files staged in memory and published together."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: dict[str, str] = {}

    def add(self, name, text):
        self.files[name] = text

    def publish(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.dir / name)
        return [self.dir / n for n in self.files]


# -- subcommands --------------------------------------------------------------

def cmd_analyze(cfg: RunConfig, args, out: _Outputs):
    row, a = evaluate(cfg)
    row["config"] = cfg.to_json()
    out.add("analyze.csv", _csv([row], [*RESULT_COLUMNS, "config"]))
    states = [{"state": k, "pi_departure": a.departure[k], "pi_steady": a.steady_state[k]}
              for k in range(len(a.steady_state))]
    out.add("analyze_states.csv", _csv(states, ["state", "pi_departure", "pi_steady"]))
    print(f"E[Q]={row['expected_occupancy']:.6g}  E[D]={row['expected_delay_s']:.6g} s  "
          f"p_b={row['blocking_prob']:.6g}  p_fork={row['p_fork']:.6g}  t_bc={row['t_bc_s']:.6g} s")
    return EXIT_OK


def _estimate_cols(prefix, e):
    return {f"{prefix}_mean": e.mean, f"{prefix}_ci_low": e.low, f"{prefix}_ci_high": e.high}


def cmd_simulate(cfg: RunConfig, args, out: _Outputs):
    res, params = simulate(cfg, trace=args.trace)
    row = {
        "lambda_tps": params.lam, "mu_blocks_per_s": params.mu, "queue_length_tx": params.capacity,
        "block_size_tx": params.block_size, "timer_tw_s": cfg.queue.timer_tw_s,
        "miners": cfg.fork.miners, "fork_enabled": cfg.fork.enabled, "p_fork": params.p_fork,
        "seed": cfg.sim.seed, "replications": cfg.sim.replications,
        **_estimate_cols("delay_s", res.mean_delay), **_estimate_cols("drop_prob", res.drop_prob),
        **_estimate_cols("occupancy", res.occupancy),
        "departures": res.departures, "blocks": res.blocks, "forks": res.fork_count,
        "config": cfg.to_json(),
    }
    out.add("simulate.csv", _csv([row], list(row)))
    states = [{"state": k, "time_fraction": float(p)} for k, p in enumerate(res.state_time_histogram)]
    out.add("simulate_states.csv", _csv(states, ["state", "time_fraction"]))
    if args.trace:
        buf = io.StringIO()
        write_trace(res.events, buf)
        out.add("trace.tsv", buf.getvalue())
    print(f"E[D]={res.mean_delay.mean:.6g} s ±{res.mean_delay.half_width:.2g}  "
          f"p_drop={res.drop_prob.mean:.6g}  E[Q]={res.occupancy.mean:.6g}  forks={res.fork_count}")
    return EXIT_OK


def _split_name(point_vals):
    if not point_vals:
        return "sweep.csv"
    parts = [f"{k.split('.')[-1]}={_fmt(v)}" for k, v in point_vals]
    return "sweep_" + "_".join(parts).replace("/", "-") + ".csv"


def cmd_sweep(cfg: RunConfig, args, out: _Outputs):
    if not cfg.sweep.grid:
        raise ConfigError("sweep.grid is empty")
    for key in cfg.sweep.split_by:
        if key not in cfg.sweep.grid:
            raise ConfigError(f"sweep.split_by key {key!r} is not a grid axis")
    rows = run_sweep(cfg)
    lead = list(cfg.sweep.grid)
    cols = [*lead, *RESULT_COLUMNS, "error", "config"]
    groups: dict = {}
    for r in rows:
        key = tuple((k, r[k]) for k in cfg.sweep.split_by)
        groups.setdefault(key, []).append(r)
    for key, rs in groups.items():
        out.add(_split_name(key), _csv(rs, cols))
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} points, {failed} failed, {len(groups)} file(s)")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args, out: _Outputs):
    tol = args.tolerance / 100 if args.tolerance is not None else None
    points = point_configs(cfg) if cfg.sweep.grid else [({}, cfg)]
    rows, ok = [], True
    lead = list(cfg.sweep.grid)
    for p, pc in points:
        row, res, v = compare_point(pc, tol)
        ok &= v.passed
        for m in v.metrics:
            rows.append({**p, "metric": m.name, "analytical": m.analytical, "simulated": m.simulated,
                         "ci_low": m.ci_low, "ci_high": m.ci_high, "rel_error": m.rel_error,
                         "in_ci": m.in_ci, "passed": m.passed})
    cols = [*lead, "metric", "analytical", "simulated", "ci_low", "ci_high", "rel_error", "in_ci",
            "passed"]
    out.add("compare.csv", _csv(rows, cols))
    n_fail = sum(1 for r in rows if not r["passed"])
    worst = max((r["rel_error"] for r in rows), default=0.0)
    print(f"{'PASS' if ok else 'FAIL'}: {len(rows) - n_fail}/{len(rows)} checks within tolerance "
          f"(max relative error {worst:.3%})")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_e2e(cfg: RunConfig, args, out: _Outputs):
    rows = e2e_rows(cfg)
    lead = ["link_mode", "fork_enabled", "n_users", "seed"]
    out.add("e2e.csv", _csv(rows, _columns(rows, lead)))
    summary = e2e_summary(rows)
    out.add("e2e_summary.csv", _csv(summary, _columns(summary)))
    for s in summary:
        print(f"{s['link_mode']:>9} forks={'on ' if s['fork_enabled'] else 'off'} "
              f"users={s['n_users']:>3}  t_bc={s['t_bc_mean_s']:.4g} s  p_fork={s['p_fork']:.3f}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "compare": cmd_compare, "e2e": cmd_e2e}


EPILOG = """\
environment:
  WIRELESSBC_SEED   simulation seed when --seed is absent
  WIRELESSBC_OUT    output directory when --out is absent

exit codes:
  0 success, 2 usage error, 3 configuration error, 4 numerical failure,
  5 model and simulation disagree (compare)
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML run configuration")
    src.add_argument("--recipe", help=f"packaged configuration: {', '.join(recipe_names())}")
    common.add_argument("--seed", type=int, help="simulation seed (env WIRELESSBC_SEED)")
    common.add_argument("--out", type=Path, help="output directory (env WIRELESSBC_OUT)")
    common.add_argument("--no-forks", action="store_true", help="disable fork resolution")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (YAML syntax); repeatable")

    p = argparse.ArgumentParser(prog="wirelessbc", description=__doc__.splitlines()[0],
                                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="solve the queue model for one point")
    s = sub.add_parser("simulate", parents=[common], help="run the discrete-event simulator")
    s.add_argument("--trace", action="store_true", help="write the first replication's event trace")
    sub.add_parser("sweep", parents=[common], help="solve the model over sweep.grid")
    c = sub.add_parser("compare", parents=[common], help="check the model against simulation")
    c.add_argument("--tolerance", type=float, help="relative tolerance in percent")
    sub.add_parser("e2e", parents=[common], help="end-to-end latency over deployments")
    return p


def resolve_config(args, env=os.environ) -> tuple[RunConfig, Path]:
    if args.config is not None:
        try:
            cfg = load(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
    elif args.recipe is not None:
        cfg = load_recipe(args.recipe)
    else:
        cfg = RunConfig()
    overrides = {}
    for item in args.set:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = _yaml_scalar(text)
    seed = args.seed if args.seed is not None else env.get("WIRELESSBC_SEED")
    if seed is not None:
        try:
            overrides["sim.seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"WIRELESSBC_SEED must be an integer, got {seed!r}") from None
    if args.no_forks:
        overrides["fork.enabled"] = False
    if overrides:
        cfg = with_overrides(cfg, overrides)
    if args.no_forks and args.command == "e2e":
        cfg = with_overrides(cfg, {"e2e.forks": [False]})
    tol = getattr(args, "tolerance", None)
    if tol is not None and not tol >= 0:
        raise ConfigError("--tolerance must be >= 0")
    out = args.out or env.get("WIRELESSBC_OUT") or cfg.output.dir
    return cfg, Path(out)


def _yaml_scalar(text):
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError:
        raise ConfigError(f"cannot parse override value {text!r}") from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, out_dir = resolve_config(args)
        out = _Outputs(out_dir)
        code = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in out.publish():
        print(f"wrote {path}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
