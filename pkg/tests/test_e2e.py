import math

import numpy as np
import pytest

from wirelessbc.config import RunConfig, with_overrides
from wirelessbc.e2e import (
    compose_e2e,
    evaluate_queue_point,
    generate_deployment,
    grid_points,
    hex_centers,
    sweep,
)
from wirelessbc.forks import ForkDivergenceError, ForkParams
from wirelessbc.pipeline import evaluate, run_sweep
from wirelessbc.queue import QueueParams, analyze
from wirelessbc.wlan import LinkTimings, PhyMacParams, rx_power


def test_hex_grid():
    c = hex_centers()
    assert c.shape == (19, 2)
    assert np.allclose(c[0], 0)
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    nearest = np.sort(d, axis=1)[:, 1]
    np.testing.assert_allclose(nearest, math.sqrt(3) * 10)


def test_deployment_deterministic():
    a, b = generate_deployment(30, seed=7), generate_deployment(30, seed=7)
    np.testing.assert_array_equal(a.users, b.users)
    np.testing.assert_array_equal(a.association, b.association)


def test_users_inside_their_cell():
    dep = generate_deployment(30, seed=1)
    assert len(dep.users) == 30 and len(dep.cells) == 19
    d = np.linalg.norm(dep.users - dep.cells[dep.association], axis=1)
    assert np.all(d <= 10.0)


def test_cell_centre_has_best_signal():
    dep = generate_deployment(30, seed=1)
    d = np.linalg.norm(dep.users - dep.cells[dep.association], axis=1)
    p = PhyMacParams()
    assert np.all(rx_power(np.maximum(d, 1e-3), p) <= rx_power(1e-3, p))


def test_no_users_rejected():
    with pytest.raises(ValueError):
        generate_deployment(0, seed=0)


def _breakdown(t_bp, t_up=0.0, miners=19, enabled=True):
    fp = ForkParams(miners, t_bp, enabled=enabled)
    p = QueueParams(7.5, 15, 10, 2, 0.5, fp)
    return compose_e2e(p, fp, LinkTimings(t_up, t_bp, 0.0)), p


def test_no_fork_no_upload():
    b, p = _breakdown(0.004, enabled=False)
    assert b.p_fork == 0
    assert b.t_bc == pytest.approx(analyze(p).metrics.expected_delay + 0.004, rel=1e-14)


def test_breakdown_identity():
    b, _ = _breakdown(0.004, t_up=0.001)
    assert b.t_q + b.t_bg == pytest.approx(b.queue_delay)
    assert b.t_bg == pytest.approx(1 / 285)
    assert b.t_bc > b.t_up + b.t_q + b.t_bg + b.t_bp
    flat, _ = _breakdown(0.004, t_up=0.001, enabled=False)
    assert flat.t_bc == pytest.approx(flat.t_up + flat.t_q + flat.t_bg + flat.t_bp, rel=1e-14)


def test_doubling_propagation_increases_latency():
    prev = 0.0
    for t in (0.001, 0.002, 0.004, 0.008):
        b, _ = _breakdown(t, t_up=0.001)
        assert b.t_bc > prev
        prev = b.t_bc


def test_inconsistent_propagation_rejected():
    fp = ForkParams(19, 0.004)
    with pytest.raises(ValueError):
        compose_e2e(QueueParams(7.5, 15, 10, 2, 0.5, fp), fp, LinkTimings(0.0, 0.005, 0.0))


def test_certain_fork_diverges():
    with pytest.raises(ForkDivergenceError):
        _breakdown(10.0)


def test_table_point_is_finite():
    row, _ = evaluate(RunConfig())
    for k in ("t_up_s", "t_q_s", "t_bg_s", "t_bp_s", "p_fork", "t_bc_s"):
        assert math.isfinite(row[k])
    assert row["block_size_tx"] == 2 and row["block_size_kbits"] == 6.0


def test_block_size_units():
    a = with_overrides(RunConfig(), {"queue.block_size_kbits": 6})
    b = with_overrides(RunConfig(), {"queue.block_size_tx": 2})
    assert a.block_size_tx == 2 and b.block_size_kbits == 6.0


def test_grid_points_order():
    pts = grid_points({"a": [1, 2], "b": ["x", "y", "z"]})
    assert pts[:4] == [{"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 1, "b": "z"}, {"a": 2, "b": "x"}]


@pytest.mark.parametrize("grid", [{}, {"a": []}])
def test_empty_grid(grid):
    with pytest.raises(ValueError):
        grid_points(grid)


POINT = dict(mu=15, capacity=10, block_size=2, timer=0.5)


def test_single_point_sweep():
    rows = sweep({"lam": [5.0]}, lambda p: evaluate_queue_point({**POINT, **p}))
    assert len(rows) == 1 and rows[0]["error"] == ""


def test_failures_are_isolated():
    grid = {"lam": [5.0, -1.0, 7.5]}
    rows = sweep(grid, lambda p: evaluate_queue_point({**POINT, **p}))
    assert [r["error"] == "" for r in rows] == [True, False, True]
    assert "ValueError" in rows[1]["error"]


def test_parallel_sweep_preserves_order():
    cfg = with_overrides(RunConfig(), {
        "sweep.grid": {"queue.lambda_tps": [15.0, 2.5, 10.0, 5.0], "queue.block_size_tx": [3, 1]},
        "sweep.workers": 3,
    })
    par = run_sweep(cfg)
    seq = run_sweep(with_overrides(cfg, {"sweep.workers": 1}))
    # the echoed config differs only in sweep.workers
    strip = lambda rows: [{k: v for k, v in r.items() if k != "config"} for r in rows]
    assert strip(par) == strip(seq)
    assert [r["queue.lambda_tps"] for r in par[::2]] == [15.0, 2.5, 10.0, 5.0]


def test_lambda_averaged_delay_has_interior_minimum():
    lams = [2.5, 5, 7.5, 10, 12.5, 15]
    for tw in (0.5, 2.0):
        curve = [np.mean([analyze(QueueParams(l, 15, 10, sb, tw)).metrics.expected_delay for l in lams])
                 for sb in range(1, 6)]
        k = int(np.argmin(curve))
        assert 0 < k < 4


def test_forks_dominate_in_latency():
    cfg = RunConfig()
    for sb in (1, 2, 3):
        on, _ = evaluate(with_overrides(cfg, {"queue.block_size_tx": sb}))
        off, _ = evaluate(with_overrides(cfg, {"queue.block_size_tx": sb, "fork.enabled": False}))
        assert on["t_bc_s"] >= off["t_bc_s"]
