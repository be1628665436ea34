"""
ssep-lab RNG streams
Counter-based (Philox) generators derived from (master_seed, stream key), so a
replica draws the same numbers no matter which worker runs it.
"""

import numpy as np


def replica_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for the replica identified by ``key``."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


# Stream namespaces, kept apart so particle and Gaussian draws never share a key.
PARTICLE_STREAM = 0
GAUSSIAN_STREAM = 1
DIAGNOSTIC_STREAM = 2
