"""Seed-derived random streams.

Every stage of the pipeline draws from its own stream, derived from
(seed, label).  Adding a new stage therefore never perturbs the
randomness of existing stages.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed, label):
    """Deterministic Generator for a (seed, label) pair."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=words))
