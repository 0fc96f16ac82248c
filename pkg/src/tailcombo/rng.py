"""Seeded random streams.

All randomness goes through numpy's Philox counter-based bit generator.  A
stream is addressed by the run seed plus an integer key path, so the stream
for, say, bootstrap replicate 17 does not depend on how many replicates were
requested or on which worker process runs it.
"""

from __future__ import annotations

import numpy as np


def seed_sequence(seed, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def make_rng(seed, *key) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))


def derive_seed(seed, *key) -> int:
    """A 63-bit integer seed for the sub-stream ``key`` of ``seed``."""
    return int(seed_sequence(seed, *key).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
