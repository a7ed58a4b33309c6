"""Finite batch-service queue embedded at block departures.

Transactions arrive as a Poisson(lam) stream into a buffer of ``capacity``
positions (transactions being mined stay in the buffer). After a departure
the block is filled until ``block_size`` transactions are queued or the timer
expires, whichever comes first, then mined for an Exp(mu_eff) time. The
queue is observed right after each departure, giving a Markov chain over
occupancies ``0..capacity``; the time-stationary law follows from level
crossings per cycle (PASTA) and the mean cycle length, and the delay from
Little's law.

Two pipelines are available through :class:`ModelOptions`:

* the default, timer-aware pipeline, where the kernel out of a state below
  ``block_size`` mixes the "block filled" and "timer expired after n
  arrivals" branches, and the holding time uses the exact mean fill time;
* a literal pipeline (``ModelOptions.literal()``) whose chain only counts
  arrivals during mining and whose holding time uses the deterministic fill
  approximation ``min(T_w, (S_B - i)/lam)``. It is kept for comparison; it
  does not reproduce the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .forks import ForkParams, assess, service_split


class SaturationError(ArithmeticError):
    """Blocking probability reached one; delay is undefined."""


class ModelInconsistencyError(ArithmeticError):
    """Reconstructed steady-state mass at the full state is negative."""


class ConvergenceError(ArithmeticError):
    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class QueueParams:
    lam: float
    mu: float
    capacity: int
    block_size: int
    timer: float = math.inf
    fork: ForkParams | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if not 1 <= self.block_size <= self.capacity:
            raise ValueError(
                f"block_size must be in 1..capacity ({self.capacity}), got {self.block_size}")
        if not self.timer > 0:
            raise ValueError(f"timer must be > 0 or inf, got {self.timer}")

    @property
    def has_timer(self) -> bool:
        return math.isfinite(self.timer)

    @cached_property
    def forks(self):
        return assess(self.mu, self.fork)

    @property
    def mu_effective(self) -> float:
        return self.forks.effective_mining_rate

    @property
    def p_fork(self) -> float:
        return self.forks.p_fork


@dataclass(frozen=True)
class ModelOptions:
    """Switches between the timer-aware pipeline and the literal one.

    timer_aware_chain
        Kernel rows below ``block_size`` include the filling phase.
    exact_holding_time
        Mean fill time is E[min(T_w, Erlang(S_B - i, lam))] instead of
        ``min(T_w, (S_B - i)/lam)``.
    literal_expiry_index
        Evaluate the Poisson pmf at the destination index ``j`` (from ``i``
        to ``S_B - 1``) instead of at the arrival count ``j - i``.
    literal_expiry_serve
        Serve ``min(j - i, S_B)`` after expiry (the arrival count) instead of
        the whole occupancy ``j``.
    """

    timer_aware_chain: bool = True
    exact_holding_time: bool = True
    literal_expiry_index: bool = False
    literal_expiry_serve: bool = False

    @classmethod
    def literal(cls) -> "ModelOptions":
        return cls(False, False, True, True)


DEFAULT_OPTIONS = ModelOptions()


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray
    kind: str  # "departure" | "steady-state" | "arrival-seen"

    def __post_init__(self):
        if self.kind not in ("departure", "steady-state", "arrival-seen"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def __len__(self):
        return len(self.probs)

    def __getitem__(self, k):
        return self.probs[k]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class QueueMetrics:
    expected_occupancy: float
    expected_delay: float
    blocking_prob: float
    expected_interdeparture: float


@dataclass(frozen=True)
class Analysis:
    params: QueueParams
    transition_matrix: np.ndarray
    departure: Distribution
    steady_state: Distribution
    metrics: QueueMetrics
    options: ModelOptions = field(default=DEFAULT_OPTIONS)


def _check_state(i, params):
    if not 0 <= i <= params.capacity:
        raise ValueError(f"state {i} outside 0..{params.capacity}")


def served_count(i: int, params: QueueParams) -> int:
    """Transactions carried by the block mined from departure state ``i``.

    Fork outcomes are given by :func:`wirelessbc.forks.fork_adjusted_service_mixture`.
    """
    _check_state(i, params)
    return min(i, params.block_size)


def _mining_row(m: int, s: int, lam: float, mu: float, K: int) -> np.ndarray:
    """Next departure state when mining starts at occupancy ``m`` and ``s`` leave.

    Arrivals during an Exp(mu) epoch are geometric with ratio lam/(lam+mu);
    the buffer truncates at K, so the top state absorbs the tail.
    """
    row = np.zeros(K + 1)
    lo, hi = m - s, K - s
    n = np.arange(hi - lo)
    log_r = math.log(lam / (lam + mu))
    row[lo:hi] = np.exp(math.log(mu / (lam + mu)) + n * log_r)
    # tail P(a >= hi - lo) = r**(hi - lo); equals 1 - sum of the rest
    row[hi] = math.exp((hi - lo) * log_r)
    return row


def _log_poisson_pmf(n, x):
    n = np.asarray(n, dtype=float)
    return -x + n * math.log(x) - gammaln(n + 1)


def _fill_count_dist(i: int, params: QueueParams, literal: bool = False) -> np.ndarray:
    """P(n | timer expired) for n = 0 .. S_B - i - 1, normalised in log space."""
    r = params.block_size - i
    x = params.lam * params.timer
    idx = np.arange(r) + (i if literal else 0)
    logp = _log_poisson_pmf(idx, x)
    logp -= logp.max()
    w = np.exp(logp)
    return w / w.sum()


def timer_expiry_prob(i: int, params: QueueParams, literal: bool = False) -> float:
    """Probability that the timer fires before the block fills from state ``i``.

    Fewer than ``S_B - i`` Poisson(lam T_w) arrivals. ``literal`` sums the pmf
    over indices ``i..S_B-1`` instead of counts ``0..S_B-i-1``.
    """
    _check_state(i, params)
    if i >= params.block_size or not params.has_timer:
        return 0.0
    x = params.lam * params.timer
    if literal:
        return float(poisson.pmf(np.arange(i, params.block_size), x).sum())
    return float(poisson.cdf(params.block_size - i - 1, x))


def conditional_fill_count_prob(n: int, i: int, params: QueueParams,
                                literal: bool = False) -> float:
    """Probability of exactly ``n`` fill arrivals given the timer expired."""
    _check_state(i, params)
    if i >= params.block_size:
        raise ValueError(f"state {i} >= block size {params.block_size}: timer cannot expire")
    if not 0 <= n < params.block_size - i:
        raise ValueError(f"fill count {n} outside 0..{params.block_size - i - 1}")
    if not params.has_timer:
        raise ValueError("timer disabled: expiry has probability zero")
    return float(_fill_count_dist(i, params, literal)[n])


def mean_fill_time(i: int, params: QueueParams) -> float:
    """E[min(T_w, time of the (S_B - i)-th arrival)]."""
    r = max(params.block_size - i, 0)
    if r == 0:
        return 0.0
    if not params.has_timer:
        return r / params.lam
    # integral of P(Erlang(r, lam) > t) over [0, T_w]
    x = params.lam * params.timer
    return float(poisson.sf(np.arange(r), x).sum()) / params.lam


def state_holding_time(i: int, params: QueueParams, exact: bool = False) -> float:
    """Mean time from a departure leaving ``i`` to the next departure.

    Default is the deterministic fill approximation
    ``min(T_w, [S_B - i]^+ / lam) + 1/mu_eff``; ``exact=True`` replaces the
    first term by the mean of the truncated Erlang fill time.
    """
    _check_state(i, params)
    if exact:
        fill = mean_fill_time(i, params)
    else:
        fill = min(params.timer, max(params.block_size - i, 0) / params.lam)
    return fill + 1.0 / params.mu_effective


def _mining_starts(i: int, params: QueueParams, options: ModelOptions):
    """(weight, occupancy at mining start, block contents) out of state ``i``.

    The first entry is always the no-expiry branch.
    """
    SB = params.block_size
    if i >= SB:
        return [(1.0, i, SB)]
    tau = timer_expiry_prob(i, params, literal=options.literal_expiry_index)
    filled = SB if options.timer_aware_chain else i
    out = [(1.0 - tau, filled, min(filled, SB))]
    if tau > 0.0:
        for n, pn in enumerate(_fill_count_dist(i, params, options.literal_expiry_index)):
            m = i + n
            block = min(n, SB) if options.literal_expiry_serve else m
            out.append((tau * pn, m, block))
    return out


def _branch_rows(m: int, block: int, params: QueueParams):
    """(served, weight, row) for each fork outcome of a block mined from ``m``."""
    K, lam, mu = params.capacity, params.lam, params.mu_effective
    return [(s, w, _mining_row(m, s, lam, mu, K)) for s, w in service_split(block, params)]


def transition_prob(i: int, j: int, params: QueueParams) -> float:
    """One mining epoch from occupancy ``i`` serving ``s(i)``, fork-mixed.

    mu/(mu+lam) * (lam/(mu+lam))**(j - (i - s)) on the interior of the
    feasible set, the complement at ``j = K - s`` and zero elsewhere.
    """
    _check_state(i, params)
    _check_state(j, params)
    return float(sum(w * row[j] for _, w, row in _branch_rows(i, served_count(i, params), params)))


def build_transition_matrix(params: QueueParams, options: ModelOptions = DEFAULT_OPTIONS) -> np.ndarray:
    K = params.capacity
    P = np.zeros((K + 1, K + 1))
    for i in range(K + 1):
        if options.timer_aware_chain:
            for w, m, block in _mining_starts(i, params, options):
                if w == 0.0:
                    continue
                for _, ws, row in _branch_rows(m, block, params):
                    P[i] += w * ws * row
        else:
            for _, ws, row in _branch_rows(i, served_count(i, params), params):
                P[i] += ws * row
    return P


def departure_distribution(P: np.ndarray, tol: float = 1e-10, max_iter: int = 1_000_000) -> Distribution:
    """Solve pi = pi P with sum(pi) = 1.

    Direct solve of the transposed system with the last balance equation
    replaced by the normalisation; power iteration if that is singular or
    its residual misses ``tol``.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n == 1:
        return Distribution(np.ones(1), "departure")
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
        pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
        if pi.min() >= -1e-12 and np.abs(pi @ P - pi).max() <= tol:
            pi = np.clip(pi, 0.0, None)
            return Distribution(pi / pi.sum(), "departure")
    except np.linalg.LinAlgError:
        pass
    pi = np.full(n, 1.0 / n)
    # lazy chain: same stationary law, aperiodic
    L = 0.5 * (P + np.eye(n))
    for it in range(1, max_iter + 1):
        nxt = pi @ L
        res = np.abs(nxt - pi).max()
        pi = nxt
        if res <= tol * 0.5:
            break
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations "
                               f"(residual {res:.3e})", max_iter, res)
    pi /= pi.sum()
    res = np.abs(pi @ P - pi).max()
    if res > tol:
        raise ConvergenceError(f"stationary residual {res:.3e} > {tol}", it, res)
    return Distribution(pi, "departure")


def expected_cycle_time(pi_d, params: QueueParams, options: ModelOptions = DEFAULT_OPTIONS) -> float:
    T = [state_holding_time(i, params, exact=options.exact_holding_time)
         for i in range(params.capacity + 1)]
    return float(np.asarray(pi_d) @ np.asarray(T))


def steady_state_distribution(pi_d, params: QueueParams,
                              options: ModelOptions = DEFAULT_OPTIONS) -> Distribution:
    """Time-stationary occupancy from the departure law.

    For k < K, pi_s[k] is the expected number of arrivals per cycle that see
    k (a cycle from i <= k crosses level k at most once) divided by
    lam * E[T]. Each cycle from ``i`` contributes its no-expiry branch with
    weight 1 - tau(i) and its expiry branch with weight tau(i), the latter
    averaged over the fill count at expiry. pi_s[K] closes the mass.
    """
    pi_d = np.asarray(pi_d, dtype=float)
    K = params.capacity
    lamET = params.lam * expected_cycle_time(pi_d, params, options)
    if not lamET > 0:
        raise ArithmeticError("lam * E[T] is zero: degenerate cycle")
    if options.timer_aware_chain:
        branches = [[(w, _branch_rows(m, block, params)) for w, m, block in _mining_starts(i, params, options)]
                    for i in range(K + 1)]
    else:
        P = build_transition_matrix(params, options)
        branches = [_literal_branches(i, params, options, P) for i in range(K + 1)]
    ps = np.zeros(K + 1)
    for k in range(K):
        acc = 0.0
        for i in range(k + 1):
            if pi_d[i] == 0.0:
                continue
            cross = 0.0
            for w, rows in branches[i]:
                if w == 0.0:
                    continue
                cross += w * sum(ws * row[max(k - s + 1, 0):K - s + 1].sum() for s, ws, row in rows)
            acc += pi_d[i] * cross
        ps[k] = acc / lamET
    ps[K] = 1.0 - ps[:K].sum()
    if ps[K] < -1e-9:
        raise ModelInconsistencyError(
            f"reconstructed pi_s[K] = {ps[K]:.3e} < 0 (sum below K exceeds one)")
    ps[K] = max(ps[K], 0.0)
    if ps.min() < 0 or ps.max() > 1 + 1e-12:
        raise ModelInconsistencyError(f"steady-state entries outside [0,1]: {ps}")
    return Distribution(ps, "steady-state")


def _literal_branches(i, params, options, P):
    """Crossing terms with the literal chain rows ``P[i]`` and ``P[j]``."""
    SB = params.block_size
    s_i = served_count(i, params)
    out = [(1.0 - timer_expiry_prob(i, params, literal=options.literal_expiry_index),
            [(s_i, 1.0, P[i])])]
    if i < SB and params.has_timer:
        tau = timer_expiry_prob(i, params, literal=options.literal_expiry_index)
        for n, pn in enumerate(_fill_count_dist(i, params, options.literal_expiry_index)):
            j = i + n
            s = min(n, SB) if options.literal_expiry_serve else j
            out.append((tau * pn, [(s, 1.0, P[j])]))
    return out


def queue_metrics(pi_s, pi_d, params: QueueParams,
                  options: ModelOptions = DEFAULT_OPTIONS) -> QueueMetrics:
    pi_s = np.asarray(pi_s, dtype=float)
    K = params.capacity
    EQ = float(np.arange(K + 1) @ pi_s)
    pb = float(pi_s[K])
    admitted = float(pi_s[:K].sum())  # 1 - p_b without cancellation
    if pb >= 1.0 or admitted <= 0.0:
        raise SaturationError("blocking probability is 1: every arrival is dropped")
    ED = EQ / (params.lam * admitted)
    ET = expected_cycle_time(pi_d, params, options)
    return QueueMetrics(EQ, ED, pb, ET)


def analyze(params: QueueParams, options: ModelOptions = DEFAULT_OPTIONS) -> Analysis:
    """Full pipeline: kernel, departure law, steady state and metrics."""
    P = build_transition_matrix(params, options)
    pi_d = departure_distribution(P)
    pi_s = steady_state_distribution(pi_d, params, options)
    m = queue_metrics(pi_s, pi_d, params, options)
    return Analysis(params, P, pi_d, pi_s, m, options)
