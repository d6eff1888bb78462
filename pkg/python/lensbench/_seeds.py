"""Deterministic sub-seed derivation.

A sub-seed is the first 8 bytes (little-endian, unsigned) of the BLAKE2b digest of
``"<master>|<part1>|<part2>|..."`` where each part is rendered with ``str()``. Any port
that hashes the same byte string reproduces the same streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, *parts: str | int) -> int:
    text = "|".join(str(p) for p in (master & SEED_MASK, *parts))
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(master: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
