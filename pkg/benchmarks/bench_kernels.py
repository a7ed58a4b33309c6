"""Compiled vs pure-Python kernels on the simulator's hot loops.

    python benchmarks/bench_kernels.py [--repeat 3] [--departures 20000] [--slots 1000000]

Each workload runs on both backends from the same seed; outputs are checked
for equality before timings are reported.
"""

import argparse
import time

import numpy as np

from wirelessbc import _kernels
from wirelessbc.forks import ForkParams
from wirelessbc.queue import QueueParams
from wirelessbc.sim import SimConfig, run_replication
from wirelessbc.wlan import PhyMacParams


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def des_workload(params, departures, backend):
    cfg = SimConfig(params, departures=departures, replications=1, seed=3)
    return lambda: run_replication(cfg, np.random.PCG64(3), backend=backend)


def dcf_workload(n, nslots, backend):
    k = _kernels.get_backend(backend)
    w = PhyMacParams().cw_min
    return lambda: k.dcf_slots(np.random.PCG64(3), n, w, nslots)


def same(a, b):
    if isinstance(a, dict):
        return all(same(a[k], b[k]) for k in a)
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--departures", type=int, default=20_000)
    ap.add_argument("--slots", type=int, default=1_000_000)
    args = ap.parse_args(argv)

    try:
        _kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    cases = {
        "DES, S_B=2, T_w=0.5": lambda b: des_workload(QueueParams(7.5, 15, 10, 2, 0.5), args.departures, b),
        "DES, S_B=5, T_w=2, forks": lambda b: des_workload(
            QueueParams(15, 15, 10, 5, 2.0, ForkParams(19, 0.004)), args.departures, b),
        "DCF slots, n=10": lambda b: dcf_workload(10, args.slots, b),
        "DCF slots, n=30": lambda b: dcf_workload(30, args.slots, b),
    }
    print(f"{'workload':<28}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, make in cases.items():
        tp, op = best_of(make("python"), args.repeat)
        tc, oc = best_of(make("cython"), args.repeat)
        print(f"{name:<28}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x  {same(op, oc)}")


if __name__ == "__main__":
    main()
