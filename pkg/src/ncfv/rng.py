"""Counter-derived random streams.

Every stream is a pure function of ``(seed, *counters)``, so work split across
chunks, processes or schedules draws exactly the same numbers.
"""

import numpy as np


def stream(seed, *counters):
    """Independent generator for the given seed and counter path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *counters):
    """A 63-bit integer seed derived from ``(seed, *counters)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
