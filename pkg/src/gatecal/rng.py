"""Deterministic random streams.

Every source of randomness in the package flows through `Rng`, a thin
wrapper around numpy's counter-based Philox generator keyed by
(seed, stream). Streams are derived by hashing labels, so independent
parts of an experiment (weight init, data batches, bucket seeds,
candidate sampling) can never collide by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _derive_stream(seed: int, stream: int, labels: tuple) -> int:
    h = hashlib.sha256()
    h.update(f"{seed}:{stream}".encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


class Rng:
    """Counter-based generator (Philox 4x64) with explicit stream splitting.

    Identical (seed, stream, call sequence) produces identical output on
    every platform. `derive(*labels)` returns an independent child stream;
    the child's identity depends only on (seed, stream, labels).
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = self.seed | (self.stream << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, *labels) -> "Rng":
        """Independent child stream identified by the given labels."""
        return Rng(self.seed, _derive_stream(self.seed, self.stream, labels))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape, dtype=np.float64)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape, dtype=np.uint64)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
