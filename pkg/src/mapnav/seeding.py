"""Named, process-stable random substreams derived from one run seed.

Every piece of randomness in the package (world layout, observation noise,
masking, task sampling, action sampling) draws from a stream addressed by
``substream(seed, *labels)``.  The mapping is a cryptographic hash, so it is
identical across processes and platforms, and distinct labels never collide
in practice.
"""

import hashlib

import numpy as np


def stream_key(seed: int, *labels) -> np.ndarray:
    """128-bit Philox key derived from a seed and a label path."""
    h = hashlib.blake2s(digest_size=16)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return np.frombuffer(h.digest(), dtype=np.uint64)


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for (seed, labels...)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *labels)))
