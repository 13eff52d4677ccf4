"""Deterministic random numbers for every stochastic step in the pipeline.

SeededRng wraps numpy's Philox bit generator, which is counter-based: the
stream is a pure function of (seed, stream) and the call sequence, so the
same draws come out on every platform. OS entropy is never consulted.
Independent substreams are keyed by integer or by a stable label hash so
that adding a new consumer does not shift the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_to_stream(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """Counter-based generator; identical (seed, stream, calls) give identical bits."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream: int | str) -> "SeededRng":
        """Fresh independent stream under the same seed."""
        if isinstance(stream, str):
            stream = _label_to_stream(stream)
        return SeededRng(self.seed, stream)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
