"""Seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` derived
from one integer seed plus a tuple of labels, so results never depend on the
order in which streams are consumed.
"""

import zlib

import numpy as np


def _key(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    if isinstance(label, float):
        return zlib.crc32(repr(label).encode())
    return zlib.crc32(str(label).encode())


def derive_seed(seed, *labels):
    """Return a 32-bit integer seed derived from ``seed`` and ``labels``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(x) for x in labels)])
    return int(ss.generate_state(1)[0])


def derive_rng(seed, *labels):
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(x) for x in labels)])
    )
