import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wirelessbc.e2e import generate_deployment, hex_centers
from wirelessbc.wlan import (
    DEFAULT_MCS_TABLE,
    FrameTooLongError,
    InfeasibleLinkError,
    PhyMacParams,
    collision_prob,
    dcf_attempt_prob,
    link_timings,
    load_mcs_table,
    path_loss,
    saturation_throughput,
    select_mcs,
    simulate_dcf_throughput,
    slot_probabilities,
    slot_durations,
)

P = PhyMacParams()
US = 1e-6
MCS11 = 143.4e6


def test_single_stage_attempt_probability():
    assert dcf_attempt_prob(10, P) == 2 / 33
    assert dcf_attempt_prob(10, P) == pytest.approx(0.0606, abs=5e-5)


def test_window_of_one_always_transmits():
    assert dcf_attempt_prob(4, replace(P, cw_min=1, cw_max=1)) == 1.0


def test_collision_probability():
    assert collision_prob(10, 2 / 33) == pytest.approx(1 - (31 / 33) ** 9, rel=1e-14)
    assert collision_prob(10, 2 / 33) == pytest.approx(0.4303, abs=5e-5)


@pytest.mark.parametrize("n", [2, 5, 10, 30])
def test_multi_stage_fixed_point(n):
    p = replace(P, cw_min=16, cw_max=1024)
    tau = dcf_attempt_prob(n, p)
    c, W, m = 1 - (1 - tau) ** (n - 1), 16, 6
    rhs = 2 * (1 - 2 * c) / ((1 - 2 * c) * (W + 1) + c * W * (1 - (2 * c) ** m))
    assert tau == pytest.approx(rhs, abs=1e-12)


def test_slot_worksheet():
    # 6 Mb/s control frames carry 24 bits per 4 us symbol; MCS 11 carries 573.6.
    # RTS: ceil((16+160+6)/24)=8 sym -> 20+32 = 52 us
    # CTS: ceil((16+112+6)/24)=6 sym -> 20+24 = 44 us
    # ACK: ceil((16+32+6)/24)=3 sym  -> 20+12 = 32 us
    # DATA: ceil((16+320+12000+6)/573.6)=22 sym -> 20+88 = 108 us
    s = slot_durations(P, MCS11)
    assert s.empty_T == pytest.approx(9 * US)
    assert s.success_T == pytest.approx((52 + 3 * 16 + 44 + 108 + 32) * US, abs=1e-12)
    assert s.collision_T == pytest.approx((52 + 34) * US, abs=1e-12)
    assert s.empty_T <= s.collision_T <= s.success_T


def test_frame_too_long():
    with pytest.raises(FrameTooLongError):
        slot_durations(P, 8.6e6, payload_bits=50_000)


def test_path_loss_values():
    assert path_loss(1.0, P) == pytest.approx(11.25, abs=1e-12)
    assert path_loss(10.0, P) == pytest.approx(68.75, abs=1e-12)


@given(st.floats(0.01, 500), st.floats(0.01, 500))
def test_path_loss_monotone(a, b):
    if a < b:
        assert path_loss(a, P) < path_loss(b, P)


def test_mcs_best_case():
    assert select_mcs(-20.0) == (11, MCS11)


def test_mcs_below_table():
    with pytest.raises(InfeasibleLinkError):
        select_mcs(-83.0)


@pytest.mark.parametrize("entry", DEFAULT_MCS_TABLE)
def test_mcs_boundaries_inclusive(entry):
    assert select_mcs(entry.min_rx_dbm)[0] == entry.mcs
    if entry.mcs > 0:
        assert select_mcs(entry.min_rx_dbm - 1e-9)[0] == entry.mcs - 1


def test_mcs_table_roundtrip(tmp_path):
    f = tmp_path / "t.tsv"
    f.write_text("# custom\nmcs\tmin_rx_dbm\trate_bps\n0\t-90\t1e6\n1\t-60\t2e6\n")
    t = load_mcs_table(f)
    assert select_mcs(-70, t, cca_threshold=-95) == (0, 1e6)


def test_mcs_table_missing_column(tmp_path):
    f = tmp_path / "t.tsv"
    f.write_text("mcs\trate_bps\n0\t1e6\n")
    with pytest.raises(ValueError):
        load_mcs_table(f)


def test_slot_probabilities_exact():
    for n in range(1, 60):
        for tau in (2 / 33, 0.001, 0.3, 1 / 7, 0.999):
            pe, ps, pc = slot_probabilities(n, tau)
            assert pe + ps + pc == 1.0
            assert pc >= 0


def test_single_contender():
    s = slot_durations(P, MCS11)
    tau = 2 / 33
    assert slot_probabilities(1, tau)[2] == 0.0
    expected = tau * P.data_len_LD / ((1 - tau) * s.empty_T + tau * s.success_T)
    assert saturation_throughput(1, P, s) == pytest.approx(expected, rel=1e-14)


def test_per_node_share_decreasing():
    s = slot_durations(P, MCS11)
    share = [saturation_throughput(n, P, s) / n for n in range(1, 31)]
    assert all(b < a for a, b in zip(share, share[1:]))


def test_airtime_bound():
    s = slot_durations(P, MCS11)
    for n in range(1, 40):
        assert saturation_throughput(n, P, s) <= P.data_len_LD / s.success_T


def test_throughput_monte_carlo():
    s = slot_durations(P, MCS11)
    sim = simulate_dcf_throughput(10, P, s, nslots=10**6, seed=5)
    assert saturation_throughput(10, P, s) == pytest.approx(sim["throughput"], rel=0.02)


# -- link timings ------------------------------------------------------------

def test_neighbour_link_budget():
    d = math.sqrt(3) * 10
    assert np.linalg.norm(hex_centers()[0] - hex_centers()[1]) == pytest.approx(d)
    assert 20 - path_loss(d, P) == pytest.approx(-70.23, abs=5e-3)
    assert select_mcs(20 - path_loss(d, P))[0] == 3


def test_dedicated_propagation_worksheet():
    # neighbour links run MCS 3 (34.4 Mb/s -> 137.6 bits/symbol); links two cells apart
    # fall below sensitivity, so blocks relay hop by hop.
    # 6000-bit block: ceil((16+320+6000+6)/137.6)=47 sym -> 208 us of DATA,
    # success slot 52+48+44+208+32 = 384 us; one contender waits 9 us * (1-tau)/tau
    # = 139.5 us of empty slots, so one hop costs 523.5 us.
    # Hex eccentricities: centre 2 hops, ring one 3, ring two 4 -> mean 68/19 hops.
    dep = generate_deployment(10, seed=0)
    lt = link_timings(dep, 6000, 3000, shared=False)
    assert lt.t_bp == pytest.approx(68 / 19 * 523.5 * US, rel=1e-12)


def test_empty_block_is_overhead_only():
    dep = generate_deployment(10, seed=0)
    lt = link_timings(dep, 0, 3000, shared=False)
    # header-only DATA: ceil((16+320+6)/137.6)=3 sym -> 32 us; hop = 139.5+52+48+44+32+32
    assert lt.t_bp == pytest.approx(68 / 19 * (139.5 + 52 + 48 + 44 + 32 + 32) * US, rel=1e-12)


@pytest.mark.parametrize("shared", [False, True])
def test_doubling_block_bounds(shared):
    dep = generate_deployment(10, seed=1)
    for bits in (6000, 12000, 24000):
        a = link_timings(dep, bits, 3000, shared).t_bp
        b = link_timings(dep, 2 * bits, 3000, shared).t_bp
        assert 1.0 < b / a < 2.1


@pytest.mark.parametrize("shared", [False, True])
def test_propagation_non_decreasing_in_block_size(shared):
    dep = generate_deployment(10, seed=2)
    t = [link_timings(dep, b, 3000, shared).t_bp for b in range(0, 30_001, 1500)]
    assert all(y >= x for x, y in zip(t, t[1:]))
    assert t[-1] > t[0]


def test_shared_slower_than_dedicated():
    dep = generate_deployment(20, seed=3)
    sh = link_timings(dep, 6000, 3000, True)
    de = link_timings(dep, 6000, 3000, False)
    assert sh.t_bp > de.t_bp and sh.t_up >= de.t_up


def test_single_miner_has_no_propagation():
    lt = link_timings(generate_deployment(5, seed=0), 6000, 3000, True, miners=1)
    assert lt.t_bp == 0.0 and lt.t_up > 0


def test_disconnected_miners():
    dep = generate_deployment(5, seed=0)
    with pytest.raises(InfeasibleLinkError):
        link_timings(dep, 6000, 3000, False, params=replace(P, tx_power=-10.0))
