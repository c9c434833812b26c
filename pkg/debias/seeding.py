"""
Seeded random streams
Every consumer of randomness draws from its own named stream so that adding
or removing one consumer never shifts another's draws
"""

import zlib

import numpy as np


def _stream_key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def seeded_rng(seed: int, *stream) -> np.random.Generator:
    """
    Independent generator for (seed, stream...)

    Example:
        seeded_rng(7, "adversary", 3)
    """
    key = tuple(_stream_key(p) for p in stream)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
