"""Per-purpose random streams.

Every consumer derives its own ``numpy.random.Generator`` from the master seed
and a stable purpose label, so results never depend on the order in which
streams are created. The bit generator is Philox (counter based); its output
for a given key is identical on every platform NumPy supports.
"""
from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode('utf-8')) & 0xFFFFFFFF


def derive_stream(master_seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return the generator for ``(master_seed, label, *indices)``."""
    if master_seed < 0:
        raise ValueError("master seed must be non-negative")
    spawn_key = (label_key(label),) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, label: str, *indices: int) -> int:
    """A 63-bit integer seed for APIs that take plain integers."""
    return int(derive_stream(master_seed, label, *indices).integers(0, 2**63 - 1))
