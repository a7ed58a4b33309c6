"""Discrete-event batch-service queue simulator and model/simulation comparison."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .queue import QueueMetrics, QueueParams


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Exactly one of ``departures`` (departure epochs per replication) or
    ``seconds`` (simulated time per replication) bounds a run; ``warmup`` is
    the discarded fraction of that horizon.
    """

    queue: QueueParams
    departures: int | None = 20_000
    seconds: float | None = None
    warmup: float = 0.2
    seed: int = 0
    replications: int = 10
    empty_blocks: bool = True
    timer_anchor: str = "departure"  # or "first_arrival"
    min_window_departures: int = 1000

    def __post_init__(self):
        if (self.departures is None) == (self.seconds is None):
            raise ValueError("set exactly one of departures or seconds")
        if self.departures is not None and self.departures <= 0:
            raise ValueError("zero horizon: departures must be > 0")
        if self.seconds is not None and not self.seconds > 0:
            raise ValueError("zero horizon: seconds must be > 0")
        if not 0 <= self.warmup < 1:
            raise ValueError(f"warmup fraction must be in [0, 1), got {self.warmup}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.timer_anchor not in ("departure", "first_arrival"):
            raise ValueError(f"unknown timer anchor {self.timer_anchor!r}")
        if self.departures is not None:
            window = self.departures - int(self.warmup * self.departures)
            if window < self.min_window_departures:
                raise ValueError(f"only {window} post-warmup departures; need "
                                 f">= {self.min_window_departures}")

    @property
    def fork(self):
        return self.queue.fork


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float
    samples: tuple = ()

    @property
    def low(self):
        return self.mean - self.half_width

    @property
    def high(self):
        return self.mean + self.half_width

    def contains(self, x: float) -> bool:
        return self.low <= x <= self.high


@dataclass
class SimResult:
    mean_delay: Estimate
    drop_prob: Estimate
    occupancy: Estimate
    state_time_histogram: np.ndarray
    fork_count: int
    departures: int
    blocks: int
    replications: list = field(default_factory=list, repr=False)
    events: list | None = field(default=None, repr=False)


def t_interval(samples, level: float = 0.95) -> Estimate:
    x = np.asarray(samples, dtype=float)
    m = float(x.mean())
    if len(x) < 2:
        return Estimate(m, math.inf, tuple(x))
    hw = float(stats.t.ppf(0.5 + level / 2, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x)))
    return Estimate(m, hw, tuple(x))


def replication_streams(seed: int, n: int):
    """Independent PCG64 bit generators, one per replication."""
    return [np.random.PCG64(s) for s in np.random.SeedSequence(seed).spawn(n)]


def run_replication(config: SimConfig, bit_generator, trace: bool = False, backend=None) -> dict:
    q = config.queue
    kern = _kernels if backend is None else _kernels.get_backend(backend)
    if config.departures is not None:
        max_dep, max_t = config.departures, math.inf
        warm_dep, warm_t = int(config.warmup * config.departures), 0.0
    else:
        max_dep, max_t = np.iinfo(np.int64).max, config.seconds
        warm_dep, warm_t = 0, config.warmup * config.seconds
    r = kern.des_replication(bit_generator, float(q.lam), float(q.mu_effective), int(q.capacity),
                             int(q.block_size), float(q.timer), float(q.p_fork),
                             max_dep, max_t, warm_dep, warm_t,
                             config.empty_blocks, config.timer_anchor == "first_arrival", trace)
    if r["window_departures"] < config.min_window_departures:
        raise ValueError(f"only {r['window_departures']} post-warmup departures; "
                         f"lengthen the horizon")
    span = r["hist"].sum()
    r["histogram"] = r["hist"] / span
    r["mean_occupancy"] = float(np.arange(q.capacity + 1) @ r["histogram"])
    r["mean_delay"] = r["delay_sum"] / r["delay_count"] if r["delay_count"] else math.nan
    r["drop_prob"] = r["window_drops"] / r["window_arrivals"] if r["window_arrivals"] else 0.0
    r["window_span"] = span
    return r


def run_sim(config: SimConfig, trace: bool = False, backend=None) -> SimResult:
    """Run ``config.replications`` independent replications and aggregate.

    Confidence intervals are Student-t over replication means. With
    ``trace`` the events of the first replication are kept on the result.
    """
    reps = [run_replication(config, bg, trace=trace and i == 0, backend=backend)
            for i, bg in enumerate(replication_streams(config.seed, config.replications))]
    hist = np.mean([r["histogram"] for r in reps], axis=0)
    return SimResult(
        mean_delay=t_interval([r["mean_delay"] for r in reps]),
        drop_prob=t_interval([r["drop_prob"] for r in reps]),
        occupancy=t_interval([r["mean_occupancy"] for r in reps]),
        state_time_histogram=hist / hist.sum(),
        fork_count=sum(r["window_forks"] for r in reps),
        departures=sum(r["window_departures"] for r in reps),
        blocks=sum(r["window_blocks"] for r in reps),
        replications=reps,
        events=reps[0]["events"] if trace else None,
    )


def write_trace(events, fh) -> None:
    """One tab-separated line per event: time, event name, occupancy after."""
    for t, code, occ in events:
        fh.write(f"{t!r}\t{_kernels.EVENT_NAMES[code]}\t{occ}\n")


def read_trace(fh):
    out = []
    for line in fh:
        t, name, occ = line.rstrip("\n").split("\t")
        out.append((float(t), name, int(occ)))
    return out


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MetricVerdict:
    name: str
    analytical: float
    simulated: float
    ci_low: float
    ci_high: float
    rel_error: float
    in_ci: bool
    passed: bool


@dataclass(frozen=True)
class Verdict:
    metrics: tuple
    passed: bool

    def as_rows(self):
        return [asdict(m) for m in self.metrics]


def _rel(a, b):
    if a == b:
        return 0.0
    return abs(a - b) / abs(b) if b != 0 else math.inf


def compare(analytical: QueueMetrics, sim: SimResult, tolerance: float = 0.10,
            fingerprints: tuple | None = None, metrics=("delay",),
            abs_tolerance: float = 0.0) -> Verdict:
    """Check analytical metrics against simulation estimates.

    A metric passes when the analytical value lies inside the simulation CI
    or its relative error is within ``tolerance``, or the two differ by at
    most ``abs_tolerance`` (useful for probabilities near zero). ``fingerprints`` is an
    optional (analytical, simulated) pair of parameter keys that must match.
    """
    if fingerprints is not None and fingerprints[0] != fingerprints[1]:
        raise FingerprintMismatch(f"parameter sets differ: {fingerprints[0]} vs {fingerprints[1]}")
    table = {
        "delay": (analytical.expected_delay, sim.mean_delay),
        "drop": (analytical.blocking_prob, sim.drop_prob),
        "occupancy": (analytical.expected_occupancy, sim.occupancy),
    }
    out = []
    for name in metrics:
        a, est = table[name]
        rel = _rel(a, est.mean)
        in_ci = est.contains(a)
        out.append(MetricVerdict(name, a, est.mean, est.low, est.high, rel, in_ci,
                                 in_ci or rel <= tolerance or abs(a - est.mean) <= abs_tolerance))
    return Verdict(tuple(out), all(m.passed for m in out))


def fingerprint(params: QueueParams) -> tuple:
    f = params.fork
    return (params.lam, params.mu, params.capacity, params.block_size, params.timer,
            None if f is None else (f.miners, f.prop_delay, f.readd_all_on_fork, f.enabled))
