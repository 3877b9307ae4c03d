"""Named random streams derived from a single run seed.

Each consumer (initialization, batch order, SOC batch, ...) draws from its
own stream, so adding a consumer never shifts the numbers another one sees.
"""
import zlib

import numpy as np


def stream_seed(seed, name):
    """Deterministic ``SeedSequence`` for the stream ``name`` under ``seed``."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def stream_rng(seed, name):
    return np.random.Generator(np.random.PCG64(stream_seed(seed, name)))


def epoch_permutation(seed, epoch, n):
    """Shuffled sample order for one epoch."""
    return stream_rng(seed, f"batches/epoch-{epoch}").permutation(n)
