"""Timing comparison of the numba and numpy kernel flavours.

    python -m rangelab.benchmark [--n 65536] [--replicas 48] [--repeat 3]

Runs the three hot kernels (per-step prefix range counts, batched range
counts, enumeration moments) under both backends, checks the results
are identical, and prints a small table.  The numpy flavour is the one
selected by RANGELAB_NO_NUMBA=1; slowdowns here are the price of that
escape hatch, not a correctness concern.
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from . import backend
from ._fastpath import batch_range_counts, enum_walk_moments, prefix_range_counts
from .walks import builtin_distribution, sample_path

_ENV = "RANGELAB_NO_NUMBA"


def _with_backend(flag_off: bool, func, *args):
    old = os.environ.get(_ENV)
    os.environ[_ENV] = "1" if flag_off else "0"
    try:
        return func(*args)
    finally:
        if old is None:
            del os.environ[_ENV]
        else:
            os.environ[_ENV] = old


def _time(func, *args, repeat: int = 3):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = func(*args)
        best = min(best, time.perf_counter() - t0)
    return result, best


def _bench_case(name, func, args, repeat, rows, equal):
    if backend.HAS_NUMBA:
        # Trigger compilation outside the timed region.
        _with_backend(False, func, *args)
    res_nb, t_nb = _time(lambda: _with_backend(False, func, *args),
                         repeat=repeat)
    res_np, t_np = _time(lambda: _with_backend(True, func, *args),
                         repeat=repeat)
    rows.append((name, t_nb, t_np))
    equal.append((name, bool(np.all(equalize(res_nb) == equalize(res_np)))))


def equalize(res):
    if isinstance(res, tuple):
        return np.concatenate([np.asarray(r).ravel() for r in res])
    return np.asarray(res)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=65536,
                        help="walk length for the range-count kernels")
    parser.add_argument("--replicas", type=int, default=48,
                        help="batch size for the batched kernel")
    parser.add_argument("--enum-n", type=int, default=9,
                        help="steps for the enumeration kernel (4^n paths)")
    parser.add_argument("--repeat", type=int, default=3,
                        help="timing repetitions (best is reported)")
    args = parser.parse_args(argv)

    dist = builtin_distribution("srw")
    sup_x = dist.support[:, 0].astype(np.int64)
    sup_y = dist.support[:, 1].astype(np.int64)

    keys = sample_path(dist, args.n, master_seed=2024).packed()
    rng = np.random.default_rng(2024)
    idx2d = rng.integers(0, len(dist.probs),
                         size=(args.replicas, args.n)).astype(np.int64)

    rows: list = []
    equal: list = []
    _bench_case(f"prefix_range_counts n={args.n}",
                prefix_range_counts, (keys,), args.repeat, rows, equal)
    _bench_case(f"batch_range_counts {args.replicas}x{args.n}",
                batch_range_counts, (idx2d, sup_x, sup_y),
                args.repeat, rows, equal)
    _bench_case(f"enum_walk_moments n={args.enum_n}",
                enum_walk_moments, (sup_x, sup_y, dist.probs, args.enum_n),
                args.repeat, rows, equal)

    flavour = "numba" if backend.HAS_NUMBA else "numpy (numba not installed)"
    print(f"primary backend: {flavour}")
    print(f"{'kernel':<36} {'numba[s]':>10} {'numpy[s]':>10} {'speedup':>8}")
    for name, t_nb, t_np in rows:
        ratio = t_np / t_nb if t_nb > 0 else float("inf")
        print(f"{name:<36} {t_nb:>10.4f} {t_np:>10.4f} {ratio:>7.1f}x")
    bad = [name for name, ok in equal if not ok]
    if bad:
        print("BACKEND MISMATCH in: " + ", ".join(bad))
        return 1
    print("both backends returned identical results on every kernel")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
