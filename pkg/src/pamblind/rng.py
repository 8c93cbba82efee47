"""Seeding helpers.

Every stochastic routine takes an explicit integer seed. A master seed is
split into child streams by hashing a stage tag together with an index, so
any single sequence of an experiment can be regenerated in isolation.
"""
import zlib

import numpy as np


def make_rng(seed):
    """PCG64 generator for ``seed`` (an int or a ``SeedSequence``)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def tag_hash(tag):
    return zlib.crc32(tag.encode("utf-8"))


def child_seed(master, tag, index=0):
    """Deterministic 64-bit child seed for (stage ``tag``, ``index``)."""
    ss = np.random.SeedSequence(int(master), spawn_key=(tag_hash(tag), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
