"""Deterministic random streams.

Every consumer asks for a stream by name. The stream is a PCG64 generator
seeded from ``SeedSequence(seed, spawn_key=(crc32(name),))``, so adding or
reordering parameters never shifts the numbers another parameter receives.
"""

import zlib

import numpy as np


def stream(seed, name):
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
