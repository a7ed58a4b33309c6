# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled DES and DCF slot kernels.

Mirrors ``_pykernels`` statement for statement; uniforms come straight from
the numpy bit generator's ``next_double`` so both backends see one stream.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log, INFINITY, isfinite
from libc.stdlib cimport malloc, free
from numpy.random cimport bitgen_t

cdef enum:
    ARRIVAL = 0
    DROP = 1
    TIMER_EXPIRY = 2
    MINING_START = 3
    DEPARTURE = 4
    FORK = 5


cdef inline bitgen_t* _bitgen(object bit_generator) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")


def des_replication(bit_generator, double lam, double mu, int K, int SB, double timer,
                    double p_fork, long long max_departures, double max_time,
                    long long warm_departures, double warm_time,
                    bint empty_blocks=True, bint anchor_first=False, bint trace=False):
    cdef bitgen_t* rng = _bitgen(bit_generator)
    cdef bint timed = isfinite(timer)
    cdef double[::1] hist = np.zeros(K + 1)
    # FIFO ring of admission times; occupancy never exceeds K
    cdef double* fifo = <double*> malloc((K + 1) * sizeof(double))
    if fifo == NULL:
        raise MemoryError()
    cdef int head = 0, q = 0, block, j
    cdef double t = 0.0, na, te, deadline, at
    cdef long long arrivals = 0, admitted = 0, dropped = 0, departed = 0
    cdef long long deps = 0, blocks = 0, forks = 0
    cdef long long w_arr = 0, w_drop = 0, w_deps = 0, w_blocks = 0, w_forks = 0, w_delay_n = 0
    cdef double w_delay_sum = 0.0, w_start = -1.0
    cdef bint rec = False
    events = [] if trace else None

    try:
        with bit_generator.lock:
            na = -log(1.0 - rng.next_double(rng.state)) / lam
            while deps < max_departures and t < max_time:
                if not rec and deps >= warm_departures and t >= warm_time:
                    rec = True
                    w_start = t
                if q < SB:
                    if timed and (q > 0 or not anchor_first):
                        deadline = t + timer
                    else:
                        deadline = INFINITY
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
                        fifo[(head + q) % (K + 1)] = t
                        q += 1
                        arrivals += 1
                        admitted += 1
                        if trace:
                            events.append((t, ARRIVAL, q))
                        if timed and anchor_first and deadline == INFINITY:
                            deadline = t + timer
                        na = na - log(1.0 - rng.next_double(rng.state)) / lam
                block = q if q < SB else SB
                if trace:
                    events.append((t, MINING_START, q))
                te = t - log(1.0 - rng.next_double(rng.state)) / mu
                while na < te:
                    if rec:
                        hist[q] += na - t
                        w_arr += 1
                    t = na
                    arrivals += 1
                    if q < K:
                        fifo[(head + q) % (K + 1)] = t
                        q += 1
                        admitted += 1
                        if trace:
                            events.append((t, ARRIVAL, q))
                    else:
                        dropped += 1
                        if rec:
                            w_drop += 1
                        if trace:
                            events.append((t, DROP, q))
                    na = na - log(1.0 - rng.next_double(rng.state)) / lam
                if rec:
                    hist[q] += te - t
                    w_deps += 1
                t = te
                deps += 1
                if p_fork > 0.0 and rng.next_double(rng.state) < p_fork:
                    forks += 1
                    if rec:
                        w_forks += 1
                    if trace:
                        events.append((t, FORK, q))
                else:
                    blocks += 1
                    if rec:
                        w_blocks += 1
                    for j in range(block):
                        at = fifo[head]
                        head = (head + 1) % (K + 1)
                        if rec:
                            w_delay_sum += t - at
                            w_delay_n += 1
                    q -= block
                    departed += block
                    if trace:
                        events.append((t, DEPARTURE, q))
    finally:
        free(fifo)

    return {
        "hist": np.asarray(hist),
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


def dcf_slots(bit_generator, int n, int W, long long nslots):
    cdef bitgen_t* rng = _bitgen(bit_generator)
    cdef long* b = <long*> malloc(n * sizeof(long))
    if b == NULL:
        raise MemoryError()
    cdef long long slot = 0, ne = 0, ns = 0, nc = 0, k
    cdef long m
    cdef int st, tx
    try:
        with bit_generator.lock:
            for st in range(n):
                b[st] = <long>(rng.next_double(rng.state) * W)
            while slot < nslots:
                m = b[0]
                for st in range(1, n):
                    if b[st] < m:
                        m = b[st]
                if m > 0:
                    k = m if m < nslots - slot else nslots - slot
                    ne += k
                    slot += k
                    for st in range(n):
                        b[st] -= k
                    if slot >= nslots:
                        break
                tx = 0
                for st in range(n):
                    if b[st] == 0:
                        tx += 1
                if tx == 1:
                    ns += 1
                else:
                    nc += 1
                slot += 1
                for st in range(n):
                    if b[st] == 0:
                        b[st] = <long>(rng.next_double(rng.state) * W)
                    else:
                        b[st] -= 1
    finally:
        free(b)
    return ne, ns, nc
