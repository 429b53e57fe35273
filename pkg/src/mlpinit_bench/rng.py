"""Named random sub-streams derived from one root seed."""

import zlib

import numpy as np

STREAMS = (
    "split",
    "init",
    "dropout",
    "sampler",
    "directions",
    "features",
    "structure",
    "negatives",
    "mix",
)


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return the generator for sub-stream ``name`` of root ``seed``.

    Extra integers (an epoch, a layer) derive further independent streams.
    The mapping is stable across processes and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, key, *extra]))
