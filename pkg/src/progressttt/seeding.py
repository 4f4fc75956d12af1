"""Child-seed derivation.

Every random stream in a run is seeded by hashing ``(master_seed, tag, *index)``
with BLAKE2b, so adding or reordering unrelated draws never shifts another
stream.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, tag: str, *index: int) -> int:
    """Return a 64-bit child seed for the stream named ``tag`` at ``index``."""
    payload = ":".join([str(int(master_seed)), tag, *(str(int(i)) for i in index)])
    digest = hashlib.blake2b(payload.encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(master_seed: int, tag: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, tag, *index))
