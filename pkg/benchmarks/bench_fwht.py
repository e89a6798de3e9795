#!/usr/bin/env python3
"""Benchmark the compiled Walsh-Hadamard kernel against the numpy fallback.

Usage: python benchmarks/bench_fwht.py [--repeats N]

The transform dominates sketch encode/decode when rotation is on, so this is
the number that decides whether building the extension is worth it on a given
machine. Both implementations are exercised on identical buffers; the end of
the report times a full rotated 2-bit sketch round trip for context.
"""

import argparse
import time

import numpy as np

from fedsketch.hadamard import _fwht_compiled, _fwht_numpy
from fedsketch.sketch import SketchConfig, sketch_decode, sketch_encode


def time_call(fn, v, repeats):
    best = float("inf")
    for _ in range(repeats):
        buf = v.copy()
        start = time.perf_counter()
        fn(buf)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'d':>9} {'numpy':>12} {'compiled':>12} {'speedup':>8}")
    for exp in range(8, 21, 2):
        d = 2**exp
        v = rng.standard_normal(d).astype(np.float32)
        t_numpy = time_call(_fwht_numpy, v, args.repeats)
        if _fwht_compiled is None:
            print(f"{d:>9} {t_numpy * 1e6:>10.1f}us {'n/a':>12} {'n/a':>8}")
            continue
        t_compiled = time_call(_fwht_compiled, v, args.repeats)
        print(
            f"{d:>9} {t_numpy * 1e6:>10.1f}us {t_compiled * 1e6:>10.1f}us "
            f"{t_numpy / t_compiled:>7.2f}x"
        )

    update = rng.standard_normal((1024, 1024)).astype(np.float32)
    cfg = SketchConfig(rotate=True, fraction=0.0625, bits=2)
    start = time.perf_counter()
    enc = sketch_encode(update, cfg, rng)
    mid = time.perf_counter()
    sketch_decode(enc)
    end = time.perf_counter()
    print(
        f"\nrotated 2-bit sketch of a 1M-element layer: "
        f"encode {1e3 * (mid - start):.1f}ms, decode {1e3 * (end - mid):.1f}ms"
    )


if __name__ == "__main__":
    main()
