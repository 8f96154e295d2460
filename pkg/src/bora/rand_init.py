"""Seeded xoshiro256** streams and Kaiming-uniform initialization.

The generator is pure integer arithmetic, so a seed produces the same bits
on every platform. Streams are seeded through splitmix64.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Xoshiro256",
    "splitmix64",
    "uniform_stream",
    "normal_stream",
    "uniform_matrix",
    "kaiming_bound",
    "kaiming_uniform",
]

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** generator.

    >>> Xoshiro256(1).next_u64() == Xoshiro256(1).next_u64()
    True
    """

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        sm = seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        if not low < high:
            raise ValueError(f"need low < high, got low={low}, high={high}")
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        span = high - low
        out = np.empty(count)
        for i in range(count):
            v = low + span * self.random()
            # rounding can land exactly on `high` for wide spans
            out[i] = v if v < high else math.nextafter(high, low)
        return out

    def normal(self, count: int) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        out = np.empty(count)
        for i in range(0, count, 2):
            u1 = 1.0 - self.random()
            u2 = self.random()
            rad = math.sqrt(-2.0 * math.log(u1))
            out[i] = rad * math.cos(2.0 * math.pi * u2)
            if i + 1 < count:
                out[i + 1] = rad * math.sin(2.0 * math.pi * u2)
        return out


def uniform_stream(seed: int, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """``count`` deterministic draws from ``[low, high)``."""
    return Xoshiro256(seed).uniform(count, low, high)


def normal_stream(seed: int, count: int) -> np.ndarray:
    return Xoshiro256(seed).normal(count)


def uniform_matrix(seed: int, rows: int, cols: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    return uniform_stream(seed, rows * cols, low, high).reshape(rows, cols)


def kaiming_bound(fan_in: int) -> float:
    """Uniform bound ``1/sqrt(fan_in)`` (Kaiming-uniform with ``a = sqrt(5)``)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be at least 1, got {fan_in}")
    return 1.0 / math.sqrt(fan_in)


def kaiming_uniform(seed: int, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. draws from ``[-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    bound = kaiming_bound(fan_in)
    return uniform_matrix(seed, rows, cols, -bound, bound)
