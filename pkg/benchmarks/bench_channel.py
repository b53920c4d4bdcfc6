"""Benchmark the channel-trace kernel: numba @njit vs the pure-Python fallback.

Usage: python benchmarks/bench_channel.py [--slots N] [--users U] [--repeat R]
The same comparison can be forced globally with VRSIM_NUMBA=0.
"""
import argparse
import time

import numpy as np

from vrsim._kernels import HAVE_NUMBA
from vrsim.channel import ChannelParams, MobilityParams, generate_trace


def time_kernel(kernel: str, n_slots: int, n_users: int, repeat: int) -> float:
    params = ChannelParams()
    mobility = MobilityParams()
    generate_trace(64, n_users, params, mobility, 1e-3, np.random.SeedSequence(0), kernel=kernel)  # warm-up / JIT
    best = float("inf")
    for r in range(repeat):
        start = time.perf_counter()
        generate_trace(n_slots, n_users, params, mobility, 1e-3, np.random.SeedSequence(r), kernel=kernel)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=60_000)
    ap.add_argument("--users", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rows = []
    if HAVE_NUMBA:
        rows.append(("numba @njit", time_kernel("numba", args.slots, args.users, args.repeat)))
    else:
        print("numba not installed; timing the fallback only")
    rows.append(("pure Python/numpy fallback", time_kernel("numpy", args.slots, args.users, args.repeat)))

    print(f"\nchannel trace generation, {args.slots} slots x {args.users} users (best of {args.repeat}):")
    for name, seconds in rows:
        rate = args.slots * args.users / seconds / 1e6
        print(f"  {name:<28} {seconds * 1e3:9.2f} ms   {rate:7.2f} M user-slots/s")
    if len(rows) == 2 and rows[1][1] > 0:
        print(f"  speedup: {rows[1][1] / rows[0][1]:.1f}x")


if __name__ == "__main__":
    main()
