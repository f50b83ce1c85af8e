"""Seeded random streams.

Every stochastic routine takes an integer seed and builds a numpy
``Generator`` backed by PCG64.  Sub-streams (per task, per trial, per
restart) are derived from a tuple of integers through ``SeedSequence``,
so a stream depends only on its key and never on scheduling order.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed, *key):
    """Return a generator for the stream identified by ``(seed, *key)``."""
    words = [int(seed) & SEED_MASK] + [int(k) & SEED_MASK for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def derive_seed(seed, *key):
    """A 63-bit integer seed for the sub-stream ``(seed, *key)``."""
    words = [int(seed) & SEED_MASK] + [int(k) & SEED_MASK for k in key]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
