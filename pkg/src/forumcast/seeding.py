"""Named random substreams derived from one root seed."""

import zlib

import numpy as np

STREAMS = ("scorer", "synth", "init", "shuffle", "dropout")


def substream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
