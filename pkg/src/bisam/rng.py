"""Deterministic named random streams.

All randomness in the pipeline flows from one 64-bit master seed. Substreams
are derived by mixing the master seed with a stable hash of a stream label
through splitmix64, so dropout, weight init, splitting, shuffling etc. draw
from independent, reproducible streams regardless of call order elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance by the golden gamma and finalize."""
    x = (x + _GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def label_hash(label: str) -> int:
    """Stable 64-bit hash of a stream label (process-independent)."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_seed(master_seed: int, label: str) -> int:
    return splitmix64((master_seed & _MASK64) ^ label_hash(label))


def stream(master_seed: int, label: str) -> np.random.Generator:
    """Named substream of the master seed."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, label)))
