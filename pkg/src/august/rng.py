"""Named random sub-streams derived from a single integer seed."""

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for ``(seed, names...)``.

    Changing how many draws one stage makes never shifts another stage.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + [_key(n) for n in names])
