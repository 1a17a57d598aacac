"""Seed derivation.

Every random draw in the package comes from a ``numpy.random.Generator``
built by :func:`derive_rng`. A child seed is a pure function of the master
seed and a tuple of labels, so components never share global RNG state and
adding a new consumer does not perturb existing streams::

    derive_rng(seed, "stage", 2, "population")

Labels may be ints or strings; strings are mapped to 32-bit keys with CRC32.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer seed labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(master: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(_label_key(x) for x in labels))


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *labels)))
