"""Counter-based random numbers keyed by (seed, cell, step, channel, index).

Every draw is a pure function of its key, so results do not depend on the
order in which cells or steps are visited.  The mixing function is the
SplitMix64 finalizer (Steele, Lea & Flood 2014):

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

A key is absorbed one component at a time: ``h = mix(h + GOLDEN + part)``
starting from ``h = mix(seed)``.  Uniforms take the top 53 bits of the
final hash; normals use Box-Muller on two sub-keyed uniforms.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

# channel identifiers; never renumber, they are part of the stream layout
CH_CELL_SCALE = 1
CH_CAPACITY = 2
CH_LOAD = 3
CH_CONN_COUNT = 4
CH_PRIORITY = 5
CH_SERVICE = 6
CH_USER = 7
CH_START = 8
CH_DURATION = 9
CH_BYTES = 10
CH_DELAY = 11
CH_JITTER = 12
CH_LOSS = 13
CH_SINR = 14
CH_RSRQ = 15
CH_KPI = 16
CH_USER_SINR = 17
CH_SPLIT = 30
CH_INIT = 31
CH_SHUFFLE = 32
CH_KMEANS = 33
CH_SVM = 34


def _u64(x) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        return np.asarray(int(x) & _MASK, dtype=np.uint64)
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    return a.astype(np.int64).astype(np.uint64)


def mix(z) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on uint64 arrays."""
    z = _u64(z)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_key(seed, *parts) -> np.ndarray:
    h = mix(seed)
    with np.errstate(over="ignore"):
        for p in parts:
            h = mix(h + _GOLDEN + _u64(p))
    return h


def uniform(seed, *parts) -> np.ndarray:
    """Uniform doubles in [0, 1), broadcast over the key parts."""
    h = hash_key(seed, *parts)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normal(seed, *parts) -> np.ndarray:
    u1 = uniform(seed, *parts, 0)
    u2 = uniform(seed, *parts, 1)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def permutation(seed, n: int, *parts) -> np.ndarray:
    """Deterministic permutation of ``range(n)``: argsort of keyed hashes."""
    h = hash_key(seed, *parts, np.arange(n, dtype=np.int64))
    return np.argsort(h, kind="stable")
