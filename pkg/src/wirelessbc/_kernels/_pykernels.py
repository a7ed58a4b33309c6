"""Pure-Python kernels; same draw order as the compiled ones.

Both backends read uniforms from the same numpy bit generator
(``next_double``) and transform them identically, so a given seed produces
bit-identical results on either backend.
"""

import math
from collections import deque

import numpy as np

ARRIVAL, DROP, TIMER_EXPIRY, MINING_START, DEPARTURE, FORK = range(6)


def des_replication(bitgen, lam, mu, K, SB, timer, p_fork,
                    max_departures, max_time, warm_departures, warm_time,
                    empty_blocks=True, anchor_first=False, trace=False):
    draw = np.random.Generator(bitgen).random
    log = math.log
    inf = math.inf
    timed = math.isfinite(timer)

    hist = [0.0] * (K + 1)
    fifo = deque()
    events = [] if trace else None

    t = 0.0
    q = 0
    na = -log(1.0 - draw()) / lam
    arrivals = admitted = dropped = departed = 0
    deps = blocks = forks = 0
    w_arr = w_drop = w_deps = w_blocks = w_forks = w_delay_n = 0
    w_delay_sum = 0.0
    w_start = -1.0
    rec = False

    while deps < max_departures and t < max_time:
        if not rec and deps >= warm_departures and t >= warm_time:
            rec = True
            w_start = t
        if q < SB:
            if timed and (q > 0 or not anchor_first):
                deadline = t + timer
            else:
                deadline = inf
            while q < SB:
                if deadline <= na:
                    if rec:
                        hist[q] += deadline - t
                    t = deadline
                    if trace:
                        events.append((t, TIMER_EXPIRY, q))
                    if q == 0 and not empty_blocks:
                        deadline = t + timer
                        continue
                    break
                if rec:
                    hist[q] += na - t
                    w_arr += 1
                t = na
                q += 1
                fifo.append(t)
                arrivals += 1
                admitted += 1
                if trace:
                    events.append((t, ARRIVAL, q))
                if timed and anchor_first and deadline == inf:
                    deadline = t + timer
                na = na - log(1.0 - draw()) / lam
        block = q if q < SB else SB
        if trace:
            events.append((t, MINING_START, q))
        te = t - log(1.0 - draw()) / mu
        while na < te:
            if rec:
                hist[q] += na - t
                w_arr += 1
            t = na
            arrivals += 1
            if q < K:
                q += 1
                fifo.append(t)
                admitted += 1
                if trace:
                    events.append((t, ARRIVAL, q))
            else:
                dropped += 1
                if rec:
                    w_drop += 1
                if trace:
                    events.append((t, DROP, q))
            na = na - log(1.0 - draw()) / lam
        if rec:
            hist[q] += te - t
            w_deps += 1
        t = te
        deps += 1
        if p_fork > 0.0 and draw() < p_fork:
            forks += 1
            if rec:
                w_forks += 1
            if trace:
                events.append((t, FORK, q))
        else:
            blocks += 1
            if rec:
                w_blocks += 1
            for _ in range(block):
                at = fifo.popleft()
                if rec:
                    w_delay_sum += t - at
                    w_delay_n += 1
            q -= block
            departed += block
            if trace:
                events.append((t, DEPARTURE, q))

    return {
        "hist": np.array(hist),
        "window_start": w_start,
        "end_time": t,
        "window_arrivals": w_arr,
        "window_drops": w_drop,
        "window_departures": w_deps,
        "window_blocks": w_blocks,
        "window_forks": w_forks,
        "delay_sum": w_delay_sum,
        "delay_count": w_delay_n,
        "arrivals": arrivals,
        "admitted": admitted,
        "dropped": dropped,
        "departed": departed,
        "in_system": q,
        "departures": deps,
        "blocks": blocks,
        "forks": forks,
        "events": events,
    }


def dcf_slots(bitgen, n, W, nslots):
    """Slot counts (empty, success, collision) of n saturated single-stage stations.

    Each station holds a backoff counter uniform on 0..W-1, transmits when it
    hits zero and redraws; counters decrement once per (virtual) slot. Runs of
    empty slots are skipped in bulk.
    """
    draw = np.random.Generator(bitgen).random
    b = [int(draw() * W) for _ in range(n)]
    slot = ne = ns = nc = 0
    while slot < nslots:
        m = min(b)
        if m > 0:
            k = min(m, nslots - slot)
            ne += k
            slot += k
            b = [x - k for x in b]
            if slot >= nslots:
                break
        tx = b.count(0)
        if tx == 1:
            ns += 1
        else:
            nc += 1
        slot += 1
        for st in range(n):
            if b[st] == 0:
                b[st] = int(draw() * W)
            else:
                b[st] -= 1
    return ne, ns, nc
