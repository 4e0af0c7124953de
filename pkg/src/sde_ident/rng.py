"""Seeded random streams.

Every stream is a numpy ``Generator`` over PCG64 seeded from a
``SeedSequence(seed, spawn_key=...)``.  String labels are hashed with
BLAKE2b so that one top-level seed reproduces an entire study while each
Monte Carlo run, method and stage draws from an independent substream.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["rng_stream", "stream_key"]


def stream_key(label) -> int:
    """Stable 64-bit integer for an int or string label."""
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_stream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream ``labels`` under the root ``seed``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(k) for k in labels))
    return np.random.Generator(np.random.PCG64(ss))
