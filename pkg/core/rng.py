"""
Random streams.

Every stochastic routine takes an explicit 64-bit seed and builds a
counter-based Philox generator from it. Replication r of a Monte-Carlo run
uses seed ^ r, so results do not depend on how replications are spread over
workers.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


def derive_seed(seed: int, index: int) -> int:
    return (int(seed) ^ int(index)) & SEED_MASK
