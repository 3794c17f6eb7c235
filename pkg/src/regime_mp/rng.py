"""Purpose-named random streams split from one master seed.

Every consumer of randomness asks for a stream by name (``"chain"``,
``"brownian"``, ...) plus optional integer indices.  Streams are Philox
generators keyed through :class:`numpy.random.SeedSequence`, so the same
(master seed, purpose, index) triple always yields the same draws no matter
which other streams were requested before.  This is what makes common random
numbers across controls and spike sizes possible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

PURPOSES: tuple[str, ...] = ("chain", "brownian", "regression", "assumptions", "auxiliary")


def purpose_key(purpose: str) -> int:
    """Stable 64-bit integer derived from a purpose label."""
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class StreamFactory:
    """Deterministic factory of independent generators.

    Parameters
    ----------
    master_seed : int
        Non-negative master seed shared by a whole run.
    """

    master_seed: int

    def __post_init__(self) -> None:
        if int(self.master_seed) < 0:
            raise ValueError("master_seed must be non-negative")

    def seed_sequence(self, purpose: str, *index: int) -> np.random.SeedSequence:
        key = (purpose_key(purpose),) + tuple(int(i) for i in index)
        return np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=key)

    def generator(self, purpose: str, *index: int) -> np.random.Generator:
        """Return a fresh generator for ``purpose`` and ``index``."""
        return np.random.Generator(np.random.Philox(self.seed_sequence(purpose, *index)))

    def schedule(self) -> dict[str, int]:
        """Map each known purpose to its derived key, for run manifests."""
        return {p: purpose_key(p) for p in PURPOSES}


def generator(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Shorthand for ``StreamFactory(seed).generator(purpose, *index)``."""
    return StreamFactory(seed).generator(purpose, *index)
