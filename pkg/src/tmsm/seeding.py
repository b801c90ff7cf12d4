"""Deterministic named random streams derived from a single 64-bit seed.

Every stochastic component draws from ``rng_for(seed, "component", ...)`` so
that results are reproducible regardless of execution order or parallel
scheduling: the stream depends only on the root seed and the name path.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _digest(parts) -> int:
    h = hashlib.blake2s()
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def derive_seed(seed: int, *names) -> int:
    """64-bit child seed for the named substream."""
    return _digest((int(seed),) + names)


def rng_for(seed: int, *names) -> np.random.Generator:
    """Generator for the named substream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(seed, *names)))
