"""Counter-based random streams.

Every stream is a Philox generator keyed by a tuple of integers, so a block
of replicates always sees the same numbers regardless of the order in which
blocks are executed.
"""
import hashlib

import numpy as np


def name_key(name):
    """Stable 32-bit integer for a string label (experiment ids, tags)."""
    digest = hashlib.sha256(name.encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed, *path):
    """Return a generator for the node ``(seed, *path)`` of the stream tree.

    ``path`` entries may be ints or strings; strings are hashed with
    :func:`name_key`.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for p in path:
        words.append(name_key(p) if isinstance(p, str) else int(p))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def as_generator(rng):
    """Accept a Generator, an int seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else rng)
