"""Compare the numba and numpy block box-counting backends.

Usage: python3 benchmarks/bench_backends.py [--side 512] [--repeats 5]
"""

import argparse
import time

import numpy as np

from zfrac.features import block_radii
from zfrac.kernels import numba_block_box_counts, numpy_block_box_counts


def time_backend(fn, occ, windows, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for w in windows:
            fn(occ, w, np.asarray(block_radii(w), dtype=np.int64))
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--side", type=int, default=512)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--density", type=float, default=0.3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    occ = (rng.random((args.side, args.side)) < args.density).astype(np.uint8)
    windows = [w for w in (2, 4, 8, 16, 32) if w <= args.side // 2]

    # check agreement before timing, and trigger the JIT warmup
    for w in windows:
        radii = np.asarray(block_radii(w), dtype=np.int64)
        a = numpy_block_box_counts(occ, w, radii)
        b = numba_block_box_counts(occ, w, radii)
        assert np.array_equal(a, b), f"backend mismatch at w={w}"

    t_np = time_backend(numpy_block_box_counts, occ, windows, args.repeats)
    t_nb = time_backend(numba_block_box_counts, occ, windows, args.repeats)

    print(f"grid {args.side}x{args.side}, density {args.density}, windows {windows}")
    print(f"{'backend':<10}{'best of ' + str(args.repeats):>14}")
    print(f"{'numpy':<10}{t_np:>13.4f}s")
    print(f"{'numba':<10}{t_nb:>13.4f}s")
    print(f"speedup numba vs numpy: {t_np / t_nb:.2f}x")


if __name__ == "__main__":
    main()
