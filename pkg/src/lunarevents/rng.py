"""Counter-based random numbers (splitmix64 finaliser).

A draw is a pure function of a 64-bit key and a counter, so results do not
depend on evaluation order or on how work is split across threads.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True)
def mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_key(seed, a, b, c):
    """Key of the stream labelled by three non-negative integers."""
    k = mix(np.uint64(seed) * _GOLD + np.uint64(a + 1) * _M2)
    k = mix(k ^ (np.uint64(b) * _M1 + _GOLD))
    return mix(k ^ (np.uint64(c) * _GOLD + _M1))


@njit(cache=True)
def unit(key, i):
    """i-th uniform in [0, 1) of the stream ``key``."""
    return float(mix(key + np.uint64(i + 1) * _GOLD) >> np.uint64(11)) * _TO_UNIT
