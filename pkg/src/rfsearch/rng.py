"""Named, seeded random streams.

Every stochastic site (weight init, search noise, batch shuffling, Cutout)
draws from a stream obtained by `stream(seed, *names)`.  Streams with
different name paths are statistically independent and fully determined by
(seed, names), which is what the reproducibility contract relies on.
"""

import hashlib

import numpy as np


def _digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


def stream(seed: int, *names: str) -> np.random.Generator:
    """Return a Generator keyed by the seed and a path of stream names."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_digest(n) for n in names]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
