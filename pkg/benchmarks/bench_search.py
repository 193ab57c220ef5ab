#!/usr/bin/env python3
"""Benchmark the exhaustive cosine scan: numba kernel vs pure-numpy fallback.

Sized like the full evaluation store (7,386 chunks). The package picks the
kernel automatically; set LCRAG_NUMBA=0 to force the numpy path everywhere.

Usage: python3 benchmarks/bench_search.py [--chunks N] [--dim D] [--queries Q]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lcrag import _kernels


def timeit(fn, queries, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for q in queries:
            fn(q)
        best = min(best, time.perf_counter() - t0)
    return best / len(queries)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--chunks", type=int, default=7386)
    parser.add_argument("--dim", type=int, default=1024)
    parser.add_argument("--queries", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((args.chunks, args.dim)).astype(np.float32)
    queries = [rng.standard_normal(args.dim) for _ in range(args.queries)]

    numpy_s = timeit(lambda q: _kernels.dot_scan_numpy(matrix, q), queries)
    print(f"store {args.chunks} x {args.dim} float32, {args.queries} queries")
    print(f"numpy fallback : {numpy_s * 1e3:8.3f} ms/query")

    if _kernels.HAS_NUMBA:
        jit = _kernels._dot_scan_jit
        jit(matrix[:8], queries[0])  # compile outside the timed region
        numba_s = timeit(lambda q: jit(matrix, q), queries)
        print(f"numba kernel   : {numba_s * 1e3:8.3f} ms/query")
        print(f"speedup        : {numpy_s / numba_s:8.2f}x")
        agree = np.allclose(jit(matrix, queries[0]),
                            _kernels.dot_scan_numpy(matrix, queries[0]),
                            atol=1e-9)
        print(f"paths agree    : {agree}")
    else:
        print("numba kernel   : unavailable (LCRAG_NUMBA=0 or import failed)")


if __name__ == "__main__":
    main()
