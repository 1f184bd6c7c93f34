"""Per-replication random streams.

Replication ``i`` of an experiment seeded with ``master_seed`` always draws from
the Philox-4x64 stream keyed by ``(master_seed, i)``; the step index is the
Philox counter. Streams therefore depend only on the key, never on the order in
which replications run or on how they are split between workers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(master_seed, index):
    """Return the generator for replication ``index`` under ``master_seed``."""
    key = np.array([check_seed(master_seed), int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
