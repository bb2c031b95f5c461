"""Deterministic derivation of child seeds from a master seed.

Every random stream in the package is keyed by a master seed plus a label
path, so nested components (epoch shuffles, per-subset draws, grid cells)
get independent, reproducible generators without sharing mutable RNG state.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    """Hash a master seed and a label path into a 64-bit child seed.

    Stable across processes and platforms. Distinct paths give
    independent streams; the same path always gives the same seed.
    """
    digest = hashlib.sha256()
    digest.update(str(int(master)).encode())
    for part in parts:
        digest.update(b"/")
        digest.update(str(part).encode())
    return int.from_bytes(digest.digest()[:8], "little")


def rng_for(master: int, *parts) -> np.random.Generator:
    """Generator seeded by ``derive_seed(master, *parts)``."""
    return np.random.default_rng(derive_seed(master, *parts))
