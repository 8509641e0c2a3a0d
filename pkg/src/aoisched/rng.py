"""Named, reproducible random streams.

Every stochastic component draws from a counter-based Philox generator
keyed by (master seed, stream name).  Layout generation, packet arrivals,
activation draws and fading therefore evolve on independent substreams
that replay identically across runs and platforms, and consume the same
number of variates regardless of the policy under test (which keeps
common-random-number comparisons honest).
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the substream `name` of master seed `seed`."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))
