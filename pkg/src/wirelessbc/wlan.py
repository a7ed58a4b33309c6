"""IEEE 802.11ax link model: DCF saturation throughput, frame timing, link budget.

Saturation throughput follows the Bianchi DCF model with RTS/CTS. Control
frames (RTS, CTS, ACK) go out at the legacy basic rate; data frames at the
MCS selected from the received power. Transaction upload and block
propagation delays are built from the mean per-frame access delay of a
saturated station, either on a channel shared with the full-buffer STAs it
senses (``shared=True``) or on a dedicated channel (single contender).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import dijkstra

from . import _kernels

L_SERVICE = 16
L_TAIL = 6


class InfeasibleLinkError(ValueError):
    """Received power below MCS 0 sensitivity or the CCA threshold."""


class FrameTooLongError(ValueError):
    """PPDU would exceed the maximum PPDU duration."""


@dataclass(frozen=True)
class PhyMacParams:
    bandwidth: float = 20e6
    carrier_freq: float = 5e9
    spatial_streams: int = 1
    phy_header_T: float = 20e-6
    ofdm_symbol_T: float = 4e-6
    tx_power: float = 20.0
    cw_min: int = 32
    cw_max: int = 32
    data_len_LD: int = 12_000
    ack_len: int = 32
    rts_len: int = 160
    cts_len: int = 112
    mac_header_len: int = 320
    max_ampdu: int = 1
    max_ppdu_T: float = 5484e-6
    difs_T: float = 34e-6
    sifs_T: float = 16e-6
    empty_slot_T: float = 9e-6
    cca_threshold: float = -82.0
    pl0: float = 5.0
    alpha: float = 4.4
    sigma: float = 9.5
    gamma_obs: float = 30.0
    basic_rate: float = 6e6

    def __post_init__(self):
        for name in ("phy_header_T", "ofdm_symbol_T", "difs_T", "sifs_T", "empty_slot_T",
                     "max_ppdu_T", "basic_rate", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("data_len_LD", "ack_len", "rts_len", "cts_len", "mac_header_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 1 <= self.cw_min <= self.cw_max:
            raise ValueError("need 1 <= cw_min <= cw_max")


@dataclass(frozen=True)
class SlotDurations:
    empty_T: float
    success_T: float
    collision_T: float


@dataclass(frozen=True)
class LinkTimings:
    t_up: float
    t_bp: float
    per_node_throughput: float


@dataclass(frozen=True)
class McsEntry:
    mcs: int
    min_rx_dbm: float
    rate_bps: float


def load_mcs_table(path=None) -> tuple[McsEntry, ...]:
    """Read a tab-separated ``mcs, min_rx_dbm, rate_bps`` table ('#' comments)."""
    if path is None:
        text = resources.files("wirelessbc").joinpath("data/mcs_he20_1ss.tsv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.DictReader(lines, delimiter="\t"))
    missing = {"mcs", "min_rx_dbm", "rate_bps"} - set(rows[0] if rows else ())
    if missing:
        raise ValueError(f"MCS table missing columns: {sorted(missing)}")
    table = tuple(sorted((McsEntry(int(r["mcs"]), float(r["min_rx_dbm"]), float(r["rate_bps"]))
                          for r in rows), key=lambda e: e.mcs))
    return table


DEFAULT_MCS_TABLE = load_mcs_table()


# -- DCF -------------------------------------------------------------------

def dcf_attempt_prob(n: int, params: PhyMacParams, tol: float = 1e-12) -> float:
    """Per-slot transmission probability of a saturated station.

    A single backoff stage (cw_min == cw_max == W) gives 2/(W+1). Otherwise
    the coupled attempt/collision fixed point is solved with
    ``m = log2(cw_max/cw_min)`` doubling stages.
    """
    if n < 1:
        raise ValueError("need at least one contender")
    W = params.cw_min
    if params.cw_min == params.cw_max:
        return 2.0 / (W + 1)
    m = round(math.log2(params.cw_max / params.cw_min))

    def attempt(p):
        if abs(1 - 2 * p) < 1e-15:
            # limit p -> 1/2
            return 2.0 / (W + 1 + W * m / 2)
        return 2 * (1 - 2 * p) / ((1 - 2 * p) * (W + 1) + p * W * (1 - (2 * p) ** m))

    def g(tau):
        return tau - attempt(1 - (1 - tau) ** (n - 1))

    tau = brentq(g, 1e-12, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(tau)) > tol:
        raise ArithmeticError(f"DCF fixed point did not converge (residual {g(tau):.3e})")
    return tau


def collision_prob(n: int, tau: float) -> float:
    return 1.0 - (1.0 - tau) ** (n - 1)


def slot_probabilities(n: int, tau: float) -> tuple[float, float, float]:
    """(empty, success, collision) probabilities of a generic slot.

    The collision term is the complement of ``pe + ps`` so that the three
    sum to exactly 1.0 in floating point.
    """
    pe = (1 - tau) ** n
    ps = n * tau * (1 - tau) ** (n - 1)
    return pe, ps, 1.0 - (pe + ps)


# -- frame timing ------------------------------------------------------------

def frame_duration(bits: float, rate: float, params: PhyMacParams) -> float:
    """PHY header plus whole OFDM symbols carrying service, ``bits`` and tail."""
    bits_per_symbol = rate * params.ofdm_symbol_T
    n_sym = math.ceil((L_SERVICE + bits + L_TAIL) / bits_per_symbol - 1e-9)
    return params.phy_header_T + n_sym * params.ofdm_symbol_T


def slot_durations(params: PhyMacParams, mcs_rate: float, payload_bits: float | None = None) -> SlotDurations:
    """Empty, successful and collision slot durations with RTS/CTS.

    One MPDU per PPDU; ``payload_bits`` defaults to the data length L_D.
    """
    if not mcs_rate > 0:
        raise ValueError("mcs_rate must be > 0")
    if payload_bits is None:
        payload_bits = params.data_len_LD
    t_rts = frame_duration(params.rts_len, params.basic_rate, params)
    t_cts = frame_duration(params.cts_len, params.basic_rate, params)
    t_ack = frame_duration(params.ack_len, params.basic_rate, params)
    t_data = frame_duration(params.mac_header_len + payload_bits, mcs_rate, params)
    if t_data > params.max_ppdu_T:
        raise FrameTooLongError(f"data PPDU {t_data * 1e6:.1f} us exceeds "
                                f"{params.max_ppdu_T * 1e6:.1f} us")
    return SlotDurations(
        empty_T=params.empty_slot_T,
        success_T=t_rts + 3 * params.sifs_T + t_cts + t_data + t_ack,
        collision_T=t_rts + params.difs_T,
    )


def mean_slot_time(n: int, tau: float, slots: SlotDurations) -> float:
    pe, ps, pc = slot_probabilities(n, tau)
    return pe * slots.empty_T + ps * slots.success_T + pc * slots.collision_T


def saturation_throughput(n: int, params: PhyMacParams, slots: SlotDurations) -> float:
    """Aggregate saturation throughput (payload bits/s) of ``n`` contenders."""
    tau = dcf_attempt_prob(n, params)
    _, ps, _ = slot_probabilities(n, tau)
    return ps * params.data_len_LD / mean_slot_time(n, tau, slots)


def simulate_dcf_throughput(n: int, params: PhyMacParams, slots: SlotDurations,
                            nslots: int = 10**7, seed: int = 0) -> dict:
    """Backoff-counter simulation of ``n`` saturated single-stage stations."""
    if params.cw_min != params.cw_max:
        raise NotImplementedError("slot simulator covers the single-stage window only")
    ne, ns, nc = _kernels.dcf_slots(np.random.PCG64(seed), n, params.cw_min, nslots)
    busy = ne * slots.empty_T + ns * slots.success_T + nc * slots.collision_T
    return {"empty": ne, "success": ns, "collision": nc,
            "throughput": ns * params.data_len_LD / busy}


def access_delay(n: int, params: PhyMacParams, slots: SlotDurations) -> float:
    """Mean time for a saturated station to deliver one frame among ``n``.

    Each station gets a 1/n share of the p_s successes, so one frame takes
    n * E[T_slot] / p_s on average.
    """
    tau = dcf_attempt_prob(n, params)
    _, ps, _ = slot_probabilities(n, tau)
    return n * mean_slot_time(n, tau, slots) / ps


# -- link budget ------------------------------------------------------------

def path_loss(d, params: PhyMacParams):
    """Log-distance loss with deterministic shadowing and per-10 m obstacle terms (dB)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    pl = params.pl0 + 10 * params.alpha * np.log10(d) + params.sigma / 2 + params.gamma_obs / 2 * d / 10
    return float(pl) if pl.ndim == 0 else pl


def rx_power(d, params: PhyMacParams):
    return params.tx_power - path_loss(d, params)


def select_mcs(rx_dbm: float, table=DEFAULT_MCS_TABLE, cca_threshold: float = -82.0) -> tuple[int, float]:
    """Highest MCS whose sensitivity is met (boundary inclusive)."""
    if rx_dbm < cca_threshold:
        raise InfeasibleLinkError(f"rx power {rx_dbm:.2f} dBm below CCA {cca_threshold} dBm")
    best = None
    for e in table:
        if rx_dbm >= e.min_rx_dbm and (best is None or e.mcs > best.mcs):
            best = e
    if best is None:
        raise InfeasibleLinkError(f"rx power {rx_dbm:.2f} dBm below MCS 0 sensitivity")
    return best.mcs, best.rate_bps


def link_rate(d: float, params: PhyMacParams, table=DEFAULT_MCS_TABLE) -> float:
    return select_mcs(rx_power(d, params), table, params.cca_threshold)[1]


# -- delays over a deployment -------------------------------------------------

def _frames(bits: float, params: PhyMacParams) -> list[float]:
    """Payload of each MPDU needed to carry ``bits`` (header-only if zero)."""
    full, rest = divmod(int(math.ceil(bits)), params.data_len_LD)
    out = [float(params.data_len_LD)] * full
    if rest or not out:
        out.append(float(rest))
    return out


def message_delay(bits: float, rate: float, n: int, params: PhyMacParams) -> float:
    """Mean time to deliver ``bits`` as back-to-back frames with ``n`` contenders."""
    return sum(access_delay(n, params, slot_durations(params, rate, f)) for f in _frames(bits, params))


def contenders(pos, stations, params: PhyMacParams, exclude=None) -> int:
    """Transmitter at ``pos`` plus the full-buffer stations it senses above CCA."""
    d = np.linalg.norm(np.asarray(stations, dtype=float) - np.asarray(pos, dtype=float), axis=1)
    mask = np.ones(len(d), dtype=bool)
    if exclude is not None:
        mask[exclude] = False
    d = np.maximum(d[mask], 1e-3)
    return 1 + int(np.count_nonzero(rx_power(d, params) >= params.cca_threshold)) if len(d) else 1


def link_timings(deployment, block_bits: float, tx_bits: float, shared: bool,
                 params: PhyMacParams | None = None, miners: int | None = None,
                 table=DEFAULT_MCS_TABLE) -> LinkTimings:
    """Upload and block-propagation delays for a deployment.

    ``t_up`` averages the per-frame delivery time of a transaction from each
    UE to its AP. ``t_bp`` averages, over every miner AP as winner, the time
    until the last of the other miners holds the block. Blocks relay over
    the shortest-delay tree of feasible AP-AP links; on a shared channel a
    node hands the block to its children one after another, on dedicated
    channels it serves them in parallel.
    """
    params = params or PhyMacParams()
    aps = np.asarray(deployment.cells, dtype=float)
    users = np.asarray(deployment.users, dtype=float)
    assoc = np.asarray(deployment.association)
    M = len(aps) if miners is None else miners
    if not 1 <= M <= len(aps):
        raise ValueError(f"miners must be in 1..{len(aps)}")

    up, share = [], []
    for u, (pos, ap) in enumerate(zip(users, assoc)):
        d = max(float(np.linalg.norm(pos - aps[ap])), 1e-3)
        rate = link_rate(d, params, table)
        n = contenders(pos, users, params, exclude=u) if shared else 1
        up.append(message_delay(tx_bits, rate, n, params))
        share.append(saturation_throughput(n, params, slot_durations(params, rate)) / n)
    t_up = float(np.mean(up)) if up else 0.0
    per_node = float(np.mean(share)) if share else 0.0

    if M == 1:
        return LinkTimings(t_up, 0.0, per_node)
    peers = aps[:M]
    hop = np.full((M, M), np.inf)
    for a in range(M):
        n = contenders(peers[a], users, params) if shared else 1
        for b in range(M):
            if a == b:
                continue
            try:
                rate = link_rate(float(np.linalg.norm(peers[a] - peers[b])), params, table)
            except InfeasibleLinkError:
                continue
            hop[a, b] = message_delay(block_bits, rate, n, params)
    graph = np.where(np.isfinite(hop), hop, 0.0)
    spans = []
    for w in range(M):
        dist, pred = dijkstra(graph, directed=True, indices=w, return_predecessors=True)
        if not np.all(np.isfinite(dist)):
            raise InfeasibleLinkError("miner APs are not connected by feasible links")
        if not shared:
            spans.append(float(dist.max()))
            continue
        # sequential hand-off: children served in index order after the parent holds the block
        arrive = np.zeros(M)
        order = np.argsort(dist)
        for v in order:
            busy = arrive[v]
            for c in range(M):
                if pred[c] == v:
                    busy += hop[v, c]
                    arrive[c] = busy
        spans.append(float(arrive.max()))
    return LinkTimings(t_up, float(np.mean(spans)), per_node)
