"""Deterministic random number generation.

Everything random in this library (parameter init, dataset synthesis,
shuffling, augmentation) flows through one generator: xoshiro256** seeded
via SplitMix64. The algorithm is fixed so that a seed produces the same
datasets and training runs on every platform and in any reimplementation,
which a stdlib or numpy generator does not guarantee across versions.

The generator state is exactly 32 bytes (four u64 words), which is what
checkpoints persist to resume a run mid-stream.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MUL2 = 0x94D049BB133111EB


def splitmix64(seed: int):
    """Infinite stream of u64 values from a 64-bit seed (state expander)."""
    x = seed & _MASK64
    while True:
        x = (x + _SPLITMIX_GAMMA) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * _SPLITMIX_MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _SPLITMIX_MUL2) & _MASK64
        yield z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream with helpers for floats, ints and arrays.

    All draws consume the stream in a documented order, so callers that
    need reproducibility only have to fix the seed and the call sequence.
    """

    def __init__(self, seed: int):
        sm = splitmix64(int(seed))
        self._s = [next(sm), next(sm), next(sm), next(sm)]

    # -- core stream ---------------------------------------------------

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    # -- derived draws -------------------------------------------------

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        limit = (2**64 // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, two uniforms, no caching)."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # in (0, 1]
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape, lo: float, hi: float, dtype=np.float32) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.random()
        return (lo + (hi - lo) * out).reshape(shape).astype(dtype)

    def normal_array(self, shape, sigma: float, dtype=np.float32) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal()
        return (sigma * out).reshape(shape).astype(dtype)

    def shuffle(self, items) -> None:
        """In-place Fisher-Yates shuffle of a mutable sequence."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.int64)

    def spawn(self) -> "Rng":
        """Child stream seeded from this stream (order-sensitive)."""
        return Rng(self.next_u64())

    # -- state persistence ----------------------------------------------

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    @state.setter
    def state(self, words) -> None:
        words = [int(w) & _MASK64 for w in words]
        if len(words) != 4 or not any(words):
            raise ValueError("rng state must be four u64 words, not all zero")
        self._s = words

    def state_bytes(self) -> bytes:
        return b"".join(w.to_bytes(8, "little") for w in self._s)

    @classmethod
    def from_state_bytes(cls, raw: bytes) -> "Rng":
        if len(raw) != 32:
            raise ValueError(f"rng state must be 32 bytes, got {len(raw)}")
        rng = cls.__new__(cls)
        rng.state = [int.from_bytes(raw[i : i + 8], "little") for i in range(0, 32, 8)]
        return rng
