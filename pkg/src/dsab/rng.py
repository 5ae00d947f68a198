"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("sim", "init", "shuffle")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (seed, name) always gives the same stream."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
