"""Named, independent random streams derived from one 64-bit seed.

Every stochastic subsystem (dataset sampling, parameter init, epoch
shuffling, evaluation transforms, ...) pulls its own stream by name, so
changing how one subsystem consumes randomness never perturbs the others.
"""

import zlib

import numpy as np


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the stream `name` derived from `seed`.

    The stream key is a CRC32 of the name, so the mapping is stable across
    runs, platforms and Python versions.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))
