"""Keyed RNG substreams.

A single master seed deterministically derives an independent generator for
every (purpose, round, client) triple.  Streams are independent of execution
order, so running clients in parallel or changing how many clients
participate per round never perturbs the draws of an unrelated stream.
"""

from __future__ import annotations

import numpy as np

# Purpose keys. Each consumer of randomness owns exactly one.
DATA = 1  # synthetic sample generation
PARTITION = 2  # shard assignment
INIT = 3  # parameter initialization
SAMPLING = 4  # active-set selection, keyed by round
CLIENT = 5  # local mini-batch draws, keyed by (round, client)
DIAG = 6  # diagnostic estimators (variance draws)


def substream(master_seed: int, purpose: int, t: int = 0, k: int = 0) -> np.random.Generator:
    """Return the generator for stream (purpose, t, k) under `master_seed`."""
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=(purpose, t, k))
    return np.random.default_rng(seq)
