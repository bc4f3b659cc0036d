"""Named random substreams derived from a single seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "split", "mask", "init", "sampling")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; stable across runs and platforms."""
    key = zlib.crc32(name.encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))
