"""Portable xoshiro256** generator seeded through splitmix64."""

from __future__ import annotations

import math

import numpy as np

from . import kernels

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, count: int = 4) -> list[int]:
    x = seed & _MASK64
    out = []
    for _ in range(count):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


class SeededRng:
    """xoshiro256** stream. Identical seeds give identical streams on any platform."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.state = np.array(splitmix64(self.seed), dtype=np.uint64)

    def next_u64(self, count: int) -> np.ndarray:
        return kernels.xoshiro_fill(self.state, int(count))

    def uniform(self, size) -> np.ndarray:
        """Doubles in [0, 1) built from the top 53 bits of each output."""
        n = int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(size)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        return (mean + std * z).reshape(size)

    def integers(self, high: int, size) -> np.ndarray:
        """Uniform integers in [0, high)."""
        n = int(np.prod(size))
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1).reshape(size)

    def get_state(self) -> tuple[int, int, int, int, int]:
        return (self.seed, *(int(v) for v in self.state))

    def set_state(self, packed) -> None:
        self.seed = int(packed[0])
        self.state = np.array([int(v) for v in packed[1:5]], dtype=np.uint64)
