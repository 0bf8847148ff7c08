"""Seeded, splittable random streams.

Every stochastic choice in the pipeline (weight init, placement sampling,
epoch shuffles) draws from a stream derived from a single root seed and a
path of labels. Derivation is counter-based: the stream key is a hash of
(seed, path), so the draws of one stream never depend on how many draws
another stream made, and parallel and serial consumers see identical
values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A value-like handle on an independent random substream."""

    seed: int
    path: tuple[str, ...] = field(default_factory=tuple)

    def derive(self, *labels: object) -> "RngStream":
        """Child stream for the given labels; same labels, same stream."""
        return RngStream(self.seed, self.path + tuple(str(l) for l in labels))

    def generator(self) -> np.random.Generator:
        """Materialize as a numpy Generator (fresh on every call)."""
        # Length-prefixed labels so ("a", "b") and ("a:b",) cannot collide.
        tag = str(self.seed) + "".join(f"|{len(l)}:{l}" for l in self.path)
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        key = int.from_bytes(digest[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))


def derive(root: RngStream, *labels: object) -> RngStream:
    return root.derive(*labels)
