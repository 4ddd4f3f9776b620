"""Named, independent random streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for the substream ``(seed, *names)``.

    Substreams with different names are statistically independent, so e.g.
    drawing extra dropout masks never shifts weight initialization.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(seq))


class SeedStreams:
    """The init / dropout / shuffle streams of one training job."""

    def __init__(self, seed: int, *scope):
        self.seed = int(seed)
        self.scope = scope
        self.init = stream(seed, *scope, "init")
        self.dropout = stream(seed, *scope, "dropout")
        self.shuffle = stream(seed, *scope, "shuffle")


def set_seed(seed: int, *scope) -> SeedStreams:
    return SeedStreams(seed, *scope)
