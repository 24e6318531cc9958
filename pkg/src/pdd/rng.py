"""Named, independent random streams.

Every stream is a PCG64 generator seeded through numpy's SeedSequence from
``(seed, *keys)``, where string keys are folded to 64-bit integers with
BLAKE2b. PCG64 and SeedSequence are fully specified algorithms, so draws are
identical across platforms.
"""
import hashlib

import numpy as np


def _key(k):
    if isinstance(k, (int, np.integer)):
        return int(k)
    return int.from_bytes(hashlib.blake2b(str(k).encode(), digest_size=8).digest(), "little")


def stream(seed, *keys):
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *(_key(k) for k in keys)])
    return np.random.Generator(np.random.PCG64(ss))


def digest64(*chunks):
    """Hex BLAKE2b-64 of byte chunks."""
    h = hashlib.blake2b(digest_size=8)
    for c in chunks:
        h.update(c)
    return h.hexdigest()
