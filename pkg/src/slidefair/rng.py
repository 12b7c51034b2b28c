"""Named, seed-derived random substreams.

Every random draw in the package goes through :func:`substream` so that a
single user seed reproduces training, adversary, Monte-Carlo and split draws
independently of each other.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("train", "adversary", "mc", "split", "data", "tau")


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for stream ``name`` under ``seed``; extra ``keys`` index restarts, cells, shards."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(name), *map(int, keys)))
    return np.random.default_rng(ss)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
