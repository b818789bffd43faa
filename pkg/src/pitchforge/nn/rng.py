"""Reproducible randomness: a splittable Philox counter-based stream."""
from __future__ import annotations

import numpy as np

from .layers import softmax


class RngStream:
    """Philox generator keyed by (seed, split path).

    Identical seed and path give identical draw sequences on every platform,
    independent of thread scheduling; ``child`` derives disjoint streams.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + key)

    def uniform(self, size=None):
        return self._gen.uniform(size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, scale: float = 1.0, size=None):
        return self._gen.normal(0.0, scale, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)


def sample_categorical(logits, rng: RngStream, temperature: float = 1.0) -> int:
    """Inverse-CDF draw from softmax(logits / temperature)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    arr = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(arr)
    if not finite.any() or np.any(np.isnan(arr)) or np.any(arr == np.inf):
        raise ValueError("logits must be finite (or -inf for masked classes)")
    probs = softmax(arr / temperature)
    cdf = np.cumsum(probs)
    return int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right").clip(0, len(arr) - 1))
