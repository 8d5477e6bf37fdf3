"""Deterministic per-purpose RNG streams.

Every source of randomness in a run (data generation, per-mode init, strata
assignment, the per-age schedule shuffle, per-round client selection) draws
from its own stream derived from the master seed and a string label. Changing
one hyperparameter (say K) therefore never perturbs unrelated randomness:
mode 3's init stream is the same whether K is 5 or 40.

Labels are hashed with crc32, which is stable across processes and platforms
(unlike the builtin ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "stream_seed"]


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream_seed(master_seed: int, label: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for the stream ``label`` (plus optional integer indices)."""
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    entropy = [int(master_seed), _label_key(label), *[int(i) for i in indices]]
    return np.random.SeedSequence(entropy)


def stream(master_seed: int, label: str, *indices: int) -> np.random.Generator:
    """Independent Generator for the stream ``label`` under ``master_seed``."""
    return np.random.default_rng(stream_seed(master_seed, label, *indices))
