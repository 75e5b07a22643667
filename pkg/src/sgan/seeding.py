"""Named RNG streams derived from one master seed.

``stream(master, name)`` seeds a PCG64 generator from the entropy pair
``(master, crc32(name))``, so every stream (``dataset``, ``init``,
``training``, ``evaluation``, ...) is independent of the others and of the
order in which they are created.
"""

import zlib

import numpy as np


def stream_seed(master: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), zlib.crc32(name.encode("utf-8"))])


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, name))


def stream_int(master: int, name: str) -> int:
    return int(stream_seed(master, name).generate_state(1, np.uint64)[0])
