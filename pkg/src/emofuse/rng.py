"""Deterministic random numbers for init, sampling, and synthetic data.

The generator is xoshiro256++ seeded through splitmix64, implemented in
plain Python integers. The stream depends only on the seed and the call
sequence, never on numpy or platform details, so checkpointed states
replay bit-identically anywhere.
"""
from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_POW_NEG53 = 2.0 ** -53


def _splitmix64(x):
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """Seeded generator: identical seed implies identical draw sequence."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = self.seed
        state = []
        for _ in range(4):
            s, z = _splitmix64(s)
            state.append(z)
        if not any(state):
            state[0] = 1  # all-zero state is the one forbidden point
        self._s = state

    def u64(self) -> int:
        s0, s1, s2, s3 = self._s
        out = (_rotl((s0 + s3) & _MASK, 23) + s0) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.u64() >> 11) * _TWO_POW_NEG53  # [0, 1)
        return lo + u * (hi - lo)

    def normal(self) -> float:
        # Box-Muller; the sine partner is discarded on the scalar path.
        u1 = ((self.u64() >> 11) + 1) * _TWO_POW_NEG53  # (0, 1]
        u2 = (self.u64() >> 11) * _TWO_POW_NEG53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        span = hi - lo
        vals = [lo + (self.u64() >> 11) * _TWO_POW_NEG53 * span for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = []
        while len(vals) < n:
            u1 = ((self.u64() >> 11) + 1) * _TWO_POW_NEG53
            u2 = (self.u64() >> 11) * _TWO_POW_NEG53
            r = math.sqrt(-2.0 * math.log(u1))
            a = 2.0 * math.pi * u2
            vals.append(r * math.cos(a))
            vals.append(r * math.sin(a))
        return np.array(vals[:n], dtype=np.float64).reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            u = self.u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int, exclude: int | None = None) -> list[int]:
        """k distinct indices from range(n), optionally never `exclude`."""
        pool = [i for i in range(n) if i != exclude]
        if k > len(pool):
            raise ValueError(f"cannot sample {k} from pool of {len(pool)}")
        for i in range(k):
            j = i + self.randint(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def categorical(self, weights) -> int:
        u = self.uniform()
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1

    def spawn(self, tag: int) -> "Rng":
        """Derive an independent generator from (seed, tag)."""
        _, z = _splitmix64(self.seed ^ (tag * _GOLDEN) & _MASK)
        return Rng(z)

    def get_state(self) -> list[int]:
        return [self.seed, *self._s]

    def set_state(self, state) -> None:
        if len(state) != 5:
            raise ValueError("rng state must have 5 integers")
        self.seed = int(state[0]) & _MASK
        self._s = [int(x) & _MASK for x in state[1:]]
