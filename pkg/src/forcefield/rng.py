"""Deterministic splittable random streams.

Every stochastic routine in the package pulls its own stream keyed by
``(seed, purpose, index)`` instead of sharing a global generator.  Streams
are Philox counter-based, so the same key yields the same draws on every
run and independent keys may be consumed concurrently.
"""

import zlib

import numpy as np


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the generator for stream key ``(seed, purpose, index)``."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.Philox(ss))
