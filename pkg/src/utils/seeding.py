"""
Seed derivation
Every random stream in a run is fanned out from one integer seed.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    """Stable 64-bit seed for the stream `name` under the run seed"""
    digest = hashlib.sha256(f"{seed}:{name}".encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big')


def make_rng(seed: int, name: str = None) -> np.random.Generator:
    """numpy Generator for a named stream (or the raw seed when name is None)"""
    if name is None:
        return np.random.default_rng(seed)
    return np.random.default_rng(derive_seed(seed, name))
