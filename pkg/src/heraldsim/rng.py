"""
Stateless counter-based random numbers.

Every draw is a hash of a 64-bit stream key and one or two integer counters
(pulse index, photon ordinal), so a value depends only on *what* it is for
and never on how work was chunked or split across threads. The mixing
function is the splitmix64 finalizer.
"""
from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_GOLDEN2 = np.uint64(0xD1B54A32D192ED03)
_MASK = (1 << 64) - 1
_INV53 = 2.0 ** -53

# purpose tags mixed into stream keys
PAIRS = 1
IDLER = 2
SIGNAL = 3
DARK = 4
DARK_TIME = 5
JITTER = 6
SPECTRUM = 7


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def _mix_int(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def stream_key(seed: int, purpose: int, channel: int = 0, extra: int = 0) -> int:
    """64-bit key for one independent stream of draws."""
    k = _mix_int(int(seed) & _MASK)
    for part in (purpose, channel, extra):
        k = _mix_int(k ^ ((int(part) * 0x9E3779B97F4A7C15) & _MASK))
    return k


def _bits(key: int, counter, counter2=None) -> np.ndarray:
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(c * _GOLDEN + np.uint64(key))
        if counter2 is not None:
            c2 = np.asarray(counter2, dtype=np.uint64)
            h = _mix(h + c2 * _GOLDEN2)
    return h


def uniform(key: int, counter, counter2=None) -> np.ndarray:
    """Uniform doubles strictly inside (0, 1), one per counter (pair)."""
    h = _bits(key, counter, counter2)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def normal(key: int, counter, counter2=None) -> np.ndarray:
    """Standard normal deviates by Box-Muller on two derived uniform streams."""
    u1 = uniform(key, counter, counter2)
    u2 = uniform(_mix_int(key ^ 0x5851F42D4C957F2D), counter, counter2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
