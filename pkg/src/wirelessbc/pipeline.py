"""Evaluate a :class:`RunConfig`: link timings, queue analysis, simulation, comparison."""

from __future__ import annotations

import functools
import math

import numpy as np

from .config import RunConfig, from_text, with_overrides
from .e2e import compose_e2e, generate_deployment, grid_points, sweep
from .queue import analyze
from .sim import SimConfig, compare, fingerprint, run_sim
from .wlan import LinkTimings, link_timings

# column order of every per-point CSV row
RESULT_COLUMNS = (
    "lambda_tps", "mu_blocks_per_s", "queue_length_tx", "block_size_tx", "block_size_kbits",
    "timer_tw_s", "miners", "fork_enabled", "link_mode", "t_up_s", "t_bp_s", "p_fork",
    "expected_occupancy", "expected_delay_s", "blocking_prob", "expected_interdeparture_s",
    "t_q_s", "t_bg_s", "t_bc_s",
)


@functools.lru_cache(maxsize=512)
def _timings(phy, table, n_aps, radius, n_users, seed, block_bits, tx_bits, shared, miners):
    dep = generate_deployment(n_users, seed, n_cells=n_aps, radius=radius)
    return link_timings(dep, block_bits, tx_bits, shared, phy, miners, table)


def deployment_timings(cfg: RunConfig, seed: int) -> LinkTimings:
    """Link timings of one random deployment described by ``cfg``."""
    return _timings(cfg.phy_params(), cfg.mcs_table(), cfg.deployment.n_aps,
                    cfg.deployment.cell_radius_m, cfg.deployment.n_users, seed,
                    float(cfg.block_size_tx * cfg.bc.tx_length_bits), float(cfg.bc.tx_length_bits),
                    cfg.fork.link_mode == "shared", cfg.fork.miners)


def mean_timings(cfg: RunConfig) -> LinkTimings:
    """Link timings averaged over the configured deployment seeds.

    ``fork.tbp_s``, when set, replaces the derived propagation delay.
    """
    seeds = cfg.deployment.seeds or [0]
    lt = [deployment_timings(cfg, s) for s in seeds]
    t_up = float(np.mean([x.t_up for x in lt]))
    t_bp = float(np.mean([x.t_bp for x in lt])) if cfg.fork.tbp_s is None else cfg.fork.tbp_s
    if cfg.fork.miners == 1:
        t_bp = 0.0
    return LinkTimings(t_up, t_bp, float(np.mean([x.per_node_throughput for x in lt])))


def _row(cfg, timings, analysis, br):
    m = analysis.metrics
    return {
        "lambda_tps": cfg.queue.lambda_tps,
        "mu_blocks_per_s": cfg.bc.mu_blocks_per_s,
        "queue_length_tx": cfg.bc.queue_length_tx,
        "block_size_tx": cfg.block_size_tx,
        "block_size_kbits": cfg.block_size_kbits,
        "timer_tw_s": cfg.queue.timer_tw_s,
        "miners": cfg.fork.miners,
        "fork_enabled": cfg.fork.enabled,
        "link_mode": cfg.fork.link_mode,
        "t_up_s": timings.t_up,
        "t_bp_s": timings.t_bp,
        "p_fork": br.p_fork,
        "expected_occupancy": m.expected_occupancy,
        "expected_delay_s": m.expected_delay,
        "blocking_prob": m.blocking_prob,
        "expected_interdeparture_s": m.expected_interdeparture,
        "t_q_s": br.t_q,
        "t_bg_s": br.t_bg,
        "t_bc_s": br.t_bc,
    }


def evaluate(cfg: RunConfig, timings: LinkTimings | None = None):
    """Analytical results for one configuration: (row dict, Analysis)."""
    timings = timings or mean_timings(cfg)
    params = cfg.queue_params(timings.t_bp)
    a = analyze(params, cfg.model_options)
    br = compose_e2e(params, params.fork, timings, cfg.model_options, analysis=a)
    return _row(cfg, timings, a, br), a


def sim_config(cfg: RunConfig, params, seed: int | None = None) -> SimConfig:
    s = cfg.sim
    return SimConfig(params, departures=s.departures, seconds=s.seconds, warmup=s.warmup_fraction,
                     seed=s.seed if seed is None else seed, replications=s.replications,
                     empty_blocks=s.empty_blocks, timer_anchor=s.timer_anchor)


def simulate(cfg: RunConfig, trace: bool = False, backend=None):
    """(SimResult, QueueParams) for the configuration's queue."""
    params = cfg.queue_params(mean_timings(cfg).t_bp if cfg.fork.miners > 1 else None)
    return run_sim(sim_config(cfg, params), trace=trace, backend=backend), params


def compare_point(cfg: RunConfig, tolerance: float | None = None, backend=None):
    """Analytical row, SimResult and Verdict for one configuration."""
    row, a = evaluate(cfg)
    res = run_sim(sim_config(cfg, a.params), backend=backend)
    tol = cfg.compare.tolerance_pct / 100 if tolerance is None else tolerance
    v = compare(a.metrics, res, tol, (fingerprint(a.params), fingerprint(a.params)),
                tuple(cfg.compare.metrics), cfg.compare.abs_tolerance)
    return row, res, v


def point_configs(cfg: RunConfig, grid: dict | None = None) -> list[tuple[dict, RunConfig]]:
    """(overrides, config) for every grid point, validated up front."""
    grid = cfg.sweep.grid if grid is None else grid
    return [(p, with_overrides(cfg, p)) for p in grid_points(grid)]


def _sweep_eval(point, base_json):
    row, _ = evaluate(with_overrides(from_text(base_json), point))
    return row


def run_sweep(cfg: RunConfig) -> list[dict]:
    """Analytical sweep over ``cfg.sweep.grid``; each row carries its full config."""
    configs = point_configs(cfg)
    rows = sweep(cfg.sweep.grid, functools.partial(_sweep_eval, base_json=cfg.to_json()),
                 workers=cfg.sweep.workers)
    for row, (_, pc) in zip(rows, configs):
        row["config"] = pc.to_json()
    return rows


def e2e_rows(cfg: RunConfig) -> list[dict]:
    """Per-deployment end-to-end breakdowns over densities, link modes and fork settings."""
    rows = []
    for mode in cfg.e2e.link_modes:
        for forks_on in cfg.e2e.forks:
            for n in cfg.e2e.densities:
                pc = with_overrides(cfg, {"fork.link_mode": mode, "fork.enabled": bool(forks_on),
                                          "deployment.n_users": int(n)})
                for seed in pc.deployment.seeds or [0]:
                    t = deployment_timings(pc, seed)
                    if pc.fork.tbp_s is not None:
                        t = LinkTimings(t.t_up, pc.fork.tbp_s, t.per_node_throughput)
                    try:
                        row, _ = evaluate(pc, t)
                        err = ""
                    except (ArithmeticError, ValueError) as exc:
                        row, err = {}, f"{type(exc).__name__}: {exc}"
                    rows.append({"link_mode": mode, "fork_enabled": bool(forks_on), "n_users": n,
                                 "seed": seed, **{k: v for k, v in row.items()
                                                  if k not in ("link_mode", "fork_enabled")},
                                 "error": err})
    return rows


def e2e_summary(rows: list[dict]) -> list[dict]:
    """Mean and spread of t_bc over deployment seeds for each (mode, forks, density)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["link_mode"], r["fork_enabled"], r["n_users"]), []).append(r)
    out = []
    for (mode, fk, n), rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        vals = np.array([r["t_bc_s"] for r in ok])
        out.append({
            "link_mode": mode, "fork_enabled": fk, "n_users": n, "deployments": len(ok),
            "t_up_s": float(np.mean([r["t_up_s"] for r in ok])) if ok else math.nan,
            "t_bp_s": float(np.mean([r["t_bp_s"] for r in ok])) if ok else math.nan,
            "p_fork": float(np.mean([r["p_fork"] for r in ok])) if ok else math.nan,
            "t_bc_mean_s": float(vals.mean()) if ok else math.nan,
            "t_bc_std_s": float(vals.std(ddof=1)) if len(ok) > 1 else 0.0,
            "failed": len(rs) - len(ok),
        })
    return out
