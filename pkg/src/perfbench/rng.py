"""Per-replicate random streams.

Every replicate ``r`` of a seeded job draws from its own counter-based
Philox generator keyed by ``(seed, r)``.  A replicate's draws therefore do
not depend on which process computes it or in what order, which is what
makes chunked and multi-process runs reproduce a sequential run exactly.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int) -> np.random.Generator:
    """Return the generator for replicate ``index`` of job ``seed``."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    ss = np.random.SeedSequence(seed & _MASK64, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))
