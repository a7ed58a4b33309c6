"""Deployments, end-to-end delay composition and parameter sweeps."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .forks import ForkParams, assess, fork_amplified_delay
from .queue import DEFAULT_OPTIONS, ModelOptions, QueueParams, analyze
from .wlan import LinkTimings

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Deployment:
    cells: np.ndarray        # (N, 2) AP positions, metres
    users: np.ndarray        # (n_users, 2) UE positions
    association: np.ndarray  # (n_users,) serving cell index
    radius: float
    seed: int | None

    def __post_init__(self):
        d = np.linalg.norm(self.users - self.cells[self.association], axis=1) if len(self.users) else []
        if np.any(np.asarray(d) > self.radius + 1e-9):
            raise ValueError("a UE lies outside its cell radius")


def hex_centers(n_cells: int = 19, radius: float = 10.0) -> np.ndarray:
    """Centres of pointy-top hexagonal cells, innermost ring first."""
    rings = 0
    while 1 + 3 * rings * (rings + 1) < n_cells:
        rings += 1
    axial = [(q, r) for q in range(-rings, rings + 1) for r in range(-rings, rings + 1)
             if max(abs(q), abs(r), abs(q + r)) <= rings]
    pts = np.array([(SQRT3 * radius * (q + r / 2), 1.5 * radius * r) for q, r in axial])
    ring = np.array([max(abs(q), abs(r), abs(q + r)) for q, r in axial])
    angle = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    order = np.lexsort((angle, ring))
    return pts[order][:n_cells]


def _in_hex(x, y, radius):
    ax = np.abs(x)
    return (ax <= SQRT3 / 2 * radius) & (np.abs(y) <= radius - ax / SQRT3)


def generate_deployment(n_users: int, seed: int | None = None, n_cells: int = 19,
                        radius: float = 10.0) -> Deployment:
    """Hex grid of ``n_cells`` cells; each UE drawn uniformly inside a random cell."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    rng = np.random.default_rng(seed)
    cells = hex_centers(n_cells, radius)
    assoc = rng.integers(0, n_cells, size=n_users)
    offsets = np.empty((n_users, 2))
    filled = 0
    while filled < n_users:
        cand = rng.uniform([-SQRT3 / 2 * radius, -radius], [SQRT3 / 2 * radius, radius],
                           size=(2 * (n_users - filled), 2))
        cand = cand[_in_hex(cand[:, 0], cand[:, 1], radius)][: n_users - filled]
        offsets[filled:filled + len(cand)] = cand
        filled += len(cand)
    return Deployment(cells, cells[assoc] + offsets, assoc, radius, seed)


@dataclass(frozen=True)
class E2EBreakdown:
    t_up: float
    t_q: float
    t_bg: float
    t_bp: float
    p_fork: float
    t_bc: float
    queue_delay: float
    blocking_prob: float


def compose_e2e(params: QueueParams, fp: ForkParams | None, timings: LinkTimings,
                options: ModelOptions = DEFAULT_OPTIONS, analysis=None) -> E2EBreakdown:
    """T_up + (T_q + T_bg + T_bp) / (1 - p_fork).

    T_q + T_bg is the queue model's expected delay; T_bg alone is reported as
    the winner's mean mining time and T_q as the remainder. A precomputed
    ``analysis`` of the same parameters may be passed to skip the solve.
    """
    if fp is not None and not math.isclose(fp.prop_delay, timings.t_bp, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(f"fork propagation delay {fp.prop_delay} != link t_bp {timings.t_bp}")
    params = replace(params, fork=fp)
    fa = assess(params.mu, fp)
    if analysis is None or analysis.params != params:
        analysis = analyze(params, options)
    ed = analysis.metrics
    t_bc = fork_amplified_delay(ed.expected_delay, timings.t_bp, timings.t_up, fa.p_fork, fa.p_success)
    return E2EBreakdown(
        t_up=timings.t_up,
        t_q=ed.expected_delay - fa.winner_bg_delay_mean,
        t_bg=fa.winner_bg_delay_mean,
        t_bp=timings.t_bp,
        p_fork=fa.p_fork,
        t_bc=t_bc,
        queue_delay=ed.expected_delay,
        blocking_prob=ed.blocking_prob,
    )


def grid_points(grid: dict) -> list[dict]:
    if not grid:
        raise ValueError("empty sweep grid")
    keys = list(grid)
    for k in keys:
        if len(grid[k]) == 0:
            raise ValueError(f"sweep axis {k!r} has no values")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _safe(evaluate, point):
    try:
        return {**point, **evaluate(point), "error": ""}
    except Exception as exc:  # recorded per row; the sweep goes on
        return {**point, "error": f"{type(exc).__name__}: {exc}"}


def sweep(grid: dict, evaluate, workers: int = 1) -> list[dict]:
    """Evaluate the Cartesian product of ``grid`` in row-major order.

    ``evaluate`` maps one point (dict) to a dict of outputs; failures become
    an ``error`` entry on that row. With ``workers > 1`` points run in
    separate processes and ``evaluate`` must be picklable; row order is the
    grid order either way.
    """
    points = grid_points(grid)
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_safe, itertools.repeat(evaluate), points))
    return [_safe(evaluate, p) for p in points]


def evaluate_queue_point(point: dict, options: ModelOptions = DEFAULT_OPTIONS) -> dict:
    """Queue metrics and end-to-end breakdown for a flat point description.

    Keys: lam, mu, capacity, block_size, timer, and optionally miners,
    prop_delay, fork_enabled, t_up.
    """
    fp = None
    if point.get("miners") is not None:
        fp = ForkParams(int(point["miners"]), float(point.get("prop_delay", 0.0)),
                        enabled=bool(point.get("fork_enabled", True)))
    p = QueueParams(float(point["lam"]), float(point["mu"]), int(point["capacity"]),
                    int(point["block_size"]), float(point.get("timer", math.inf)), fp)
    timings = LinkTimings(float(point.get("t_up", 0.0)), fp.prop_delay if fp else 0.0, 0.0)
    a = analyze(p, options)
    b = compose_e2e(p, fp, timings, options, analysis=a)
    m = a.metrics
    return {
        "expected_occupancy": m.expected_occupancy,
        "expected_delay": m.expected_delay,
        "blocking_prob": m.blocking_prob,
        "expected_interdeparture": m.expected_interdeparture,
        "p_fork": b.p_fork,
        "t_bc": b.t_bc,
    }
