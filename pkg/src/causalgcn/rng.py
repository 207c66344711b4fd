"""Named, seedable random streams.

Every consumer of randomness asks for its own stream by name, so adding a
parameter or an extra dropout site never shifts the draws seen elsewhere.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))))
