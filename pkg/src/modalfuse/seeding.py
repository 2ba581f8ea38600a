"""Deterministic seed derivation.

Every random stage derives its own stream from (master seed, purpose name),
so individual pipeline stages are reproducible in isolation and reordering
one stage never perturbs another.
"""

import hashlib

import numpy as np


def derive_seed(master: int, purpose: str) -> int:
    """Stable 63-bit seed for a named purpose under the given master seed."""
    digest = hashlib.sha256(f"{master}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, purpose))
