"""Deterministic random-stream derivation.

All stochastic operations in the toolkit draw from PCG64 generators whose
seed material is derived from a user seed plus a string purpose tag. Tags
are hashed with SHA-256, so streams for different purposes never alias and
the mapping is identical on every platform and Python version.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_entropy(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *tags: str) -> np.random.Generator:
    """Return the PCG64 generator for (seed, tags).

    The same (seed, tags) pair always yields an identical stream; distinct
    tags yield statistically independent streams.
    """
    entropy = [int(seed) & _MASK64] + [_tag_entropy(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
