"""One master seed fans out to independent named sub-streams."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "noise", "density", "eval")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for sub-stream ``name``; depends only on (seed, name)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def substream_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**31 - 1))
