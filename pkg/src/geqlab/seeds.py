"""Deterministic seed derivation.

Every stochastic routine in the package takes an explicit integer seed; a
single master seed is fanned out to independent sub-streams by hashing
(master, label, index).  The derivation is stable across platforms and
Python versions (SHA-256, little-endian low 8 bytes), so runs are
byte-reproducible from the master seed alone.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "rng_for_chunk"]


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Map (master seed, label, index) to an independent u64 seed."""
    digest = hashlib.sha256(f"{master}:{label}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for_chunk(seed: int, chunk: int) -> np.random.Generator:
    """Generator for chunk `chunk` of the stream identified by `seed`.

    Chunked consumers (Monte Carlo loops, sample streams) draw each chunk
    from its own sub-stream so results depend only on (seed, chunk index),
    never on how earlier chunks interleaved.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(chunk)])
