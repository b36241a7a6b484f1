"""Counter-based random numbers.

Every random draw in the package is a pure function of a 64-bit key and an
integer counter, so streams, dropout masks and restoration masks can be
regenerated exactly without threading a mutable generator through the code.
Keys are split from a master seed with :func:`derive`.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# labels used when splitting the master seed
STREAM = 1
SOURCE = 2
DROPOUT = 3
STUDENT_DROPOUT = 4
RESTORE = 5
SHUFFLE = 6
GEOMETRY = 7


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(key: int, counters) -> np.ndarray:
    """SplitMix64 output for ``counters`` under ``key`` (uint64 array)."""
    c = np.asarray(counters, dtype=np.uint64)
    z = np.uint64(key & _MASK64) + (c + np.uint64(1)) * _GOLDEN
    return _mix(z)


def derive(seed: int, *labels: int) -> int:
    """Split a child key off ``seed`` for the given integer labels."""
    key = seed & _MASK64
    for label in labels:
        key = int(splitmix64(key, np.array([label & _MASK64], dtype=np.uint64))[0])
    return key


def uniform(key: int, n: int, start: int = 0) -> np.ndarray:
    """``n`` doubles in [0, 1) from counters ``start .. start+n-1``."""
    bits = splitmix64(key, np.arange(start, start + n, dtype=np.uint64))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def normal(key: int, n: int, start: int = 0) -> np.ndarray:
    """Standard normals by Box-Muller; consumes ``2*ceil(n/2)`` counters."""
    pairs = (n + 1) // 2
    u = uniform(key, 2 * pairs, 2 * start)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]


def permutation(key: int, n: int) -> np.ndarray:
    """Fisher-Yates shuffle of ``range(n)`` driven by the counter stream."""
    perm = list(range(n))
    u = uniform(key, max(n - 1, 0))
    for idx, i in enumerate(range(n - 1, 0, -1)):
        j = int(u[idx] * (i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)
