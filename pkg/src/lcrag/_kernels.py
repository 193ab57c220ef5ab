"""Hot numeric kernels for the exhaustive similarity scan.

Vectors are stored as float32; scores are accumulated in float64 to bound
rounding drift. The numba-jitted kernels read the float32 matrix in place,
while the pure-numpy fallback pays a float64 upcast per query. Set
``LCRAG_NUMBA=0`` to force the numpy path (used by the benchmark and by
environments without a working JIT).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("LCRAG_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _ENV_FLAG not in ("0", "false", "no", "off")

# Tiny scans are faster without JIT dispatch (and avoid paying compile
# latency on first use inside a live chat turn).
_MIN_JIT_CELLS = 16_384

if NUMBA_REQUESTED:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def dot_scan_numpy(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise dot products of a float32 matrix with a float64 query."""
    # float32 @ float64 promotes to float64, so accumulation is 64-bit.
    return matrix @ np.asarray(query, dtype=np.float64)


if HAS_NUMBA:

    @njit(cache=True)
    def _dot_scan_jit(matrix, query):  # pragma: no cover - exercised via wrapper
        n, d = matrix.shape
        out = np.empty(n, np.float64)
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += matrix[i, j] * query[j]
            out[i] = acc
        return out

    def dot_scan(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
        if matrix.size < _MIN_JIT_CELLS:
            return dot_scan_numpy(matrix, query)
        return _dot_scan_jit(
            np.ascontiguousarray(matrix), np.asarray(query, dtype=np.float64)
        )

else:
    dot_scan = dot_scan_numpy


def warmup() -> None:
    """Trigger JIT compilation ahead of latency-sensitive paths."""
    m = np.ones((192, 128), dtype=np.float32)
    q = np.ones(128, dtype=np.float64)
    dot_scan(m, q)


def active_path() -> str:
    return "numba" if HAS_NUMBA else "numpy"
