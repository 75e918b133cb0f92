"""Seeding helpers used by every generator in the package."""

import zlib

import numpy as np


def subrng(seed: int, *tags) -> np.random.Generator:
    """Deterministic child generator for (seed, tags).

    Tags may be strings or ints; strings are hashed with crc32 so the
    stream layout does not depend on Python's randomized hash.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(words)
