"""Named, reproducible random substreams.

Every consumer of randomness (weight init, shuffling, augmentation, dropout)
draws from its own stream derived from one global seed, so toggling one
consumer never perturbs another.
"""
import zlib

import numpy as np

STREAMS = ("init", "split", "shuffle", "augment", "dropout", "synth")


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return a generator for ``(seed, name, *keys)``.

    The name is hashed with CRC32 so the mapping is stable across processes
    and Python versions (unlike ``hash``).
    """
    tag = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *map(int, keys)))
    return np.random.Generator(np.random.PCG64(seq))
