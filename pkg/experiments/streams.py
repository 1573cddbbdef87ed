"""
Per-replica random streams derived from a single master seed
"""
import numpy as np


def replica_seed_sequence(seed: int, index: int, stream: int = 0) -> np.random.SeedSequence:
    """Seed sequence for (master seed, replica index, sub-stream)"""
    if seed < 0:
        raise ValueError(f"Seeds must be nonnegative, got {seed}")
    return np.random.SeedSequence(entropy=seed, spawn_key=(index, stream))


def replica_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(replica_seed_sequence(seed, index, stream))
