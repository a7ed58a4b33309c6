"""Fork probability, winner mining statistics and fork-adjusted service.

Miners race with independent Exp(mu) block-generation times. The first
order statistic of M such times is Exp(M*mu), which is the rate seen by the
transaction queue. A fork happens when some other miner finishes within the
block propagation delay of the winner; in that case every transaction of the
block is put back into the queue (worst case, nothing confirmed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ForkDivergenceError(ArithmeticError):
    """Raised when p_fork >= 1 and the retry series diverges."""


@dataclass(frozen=True)
class ForkParams:
    """Miner population and block propagation settings.

    ``enabled=False`` keeps the multi-miner mining rate but ignores fork
    resolution (p_fork is forced to zero), which is the "forks disabled"
    baseline for a given miner population.
    """

    miners: int
    prop_delay: float
    readd_all_on_fork: bool = True
    enabled: bool = True

    def __post_init__(self):
        if self.miners < 1:
            raise ValueError(f"miners must be >= 1, got {self.miners}")
        if not self.prop_delay >= 0:
            raise ValueError(f"prop_delay must be >= 0, got {self.prop_delay}")


@dataclass(frozen=True)
class ForkAssessment:
    p_fork: float
    p_success: float
    effective_mining_rate: float
    winner_bg_delay_mean: float


def _fork_exponent(mu: float, fp: ForkParams) -> float:
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    return mu * (fp.miners - 1) * fp.prop_delay


def fork_probability(mu: float, fp: ForkParams) -> float:
    """1 - exp(-mu (M-1) T_bp)."""
    return -math.expm1(-_fork_exponent(mu, fp))


def fork_survival(mu: float, fp: ForkParams) -> float:
    """1 - p_fork, computed without cancellation for p_fork close to 1."""
    return math.exp(-_fork_exponent(mu, fp))


def winner_mining_distribution(mu: float, miners: int) -> tuple[float, float]:
    """Rate and mean of the minimum of ``miners`` iid Exp(mu) variables."""
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    if miners < 1:
        raise ValueError(f"miners must be >= 1, got {miners}")
    rate = miners * mu
    return rate, 1.0 / rate


def assess(mu: float, fp: ForkParams | None) -> ForkAssessment:
    if fp is None:
        return ForkAssessment(0.0, 1.0, mu, 1.0 / mu)
    rate, mean = winner_mining_distribution(mu, fp.miners)
    if not fp.enabled:
        return ForkAssessment(0.0, 1.0, rate, mean)
    return ForkAssessment(fork_probability(mu, fp), fork_survival(mu, fp), rate, mean)


def fork_adjusted_service_mixture(i: int, params) -> list[tuple[int, float]]:
    """Served-count distribution at the departure ending a cycle from state ``i``.

    Returns ``[(min(i, S_B), 1 - p_fork), (0, p_fork)]``; zero-weight entries
    are dropped. Without ``readd_all_on_fork`` a fork does not return
    transactions to the queue and the block is always served.
    """
    if not 0 <= i <= params.capacity:
        raise ValueError(f"state {i} outside 0..{params.capacity}")
    return service_split(min(i, params.block_size), params)


def service_split(block: int, params) -> list[tuple[int, float]]:
    a = assess(params.mu, params.fork)
    if a.p_fork == 0.0 or not params.fork.readd_all_on_fork:
        return [(block, 1.0)]
    if block == 0:
        return [(0, 1.0)]
    return [(block, a.p_success), (0, a.p_fork)]


def fork_amplified_delay(tq_tbg: float, t_bp: float, t_up: float, p_fork: float,
                         p_success: float | None = None) -> float:
    """T_up + (T_q + T_bg + T_bp) / (1 - p_fork).

    ``p_success`` may be passed to avoid the cancellation in ``1 - p_fork``
    when the fork probability is extremely close to one.
    """
    if p_success is None:
        p_success = 1.0 - p_fork
    if p_fork >= 1.0 or p_success <= 0.0:
        raise ForkDivergenceError(f"fork probability {p_fork!r} >= 1: retries never end")
    return t_up + (tq_tbg + t_bp) / p_success
