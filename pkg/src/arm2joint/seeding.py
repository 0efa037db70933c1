"""Reproducible random streams.

All randomness in this package flows through the Philox counter-based bit
generator keyed by a ``numpy.random.SeedSequence``. Philox streams are stable
across platforms for a fixed numpy version, and SeedSequence gives a documented
way to derive independent child seeds from (master seed, index...) paths, so
every artifact is regenerable from the seeds recorded in its run config.
"""

import numpy as np


def derive_seed(master: int, *path: int) -> int:
    """Derive a 64-bit child seed from a master seed and an index path."""
    ss = np.random.SeedSequence([int(master), *[int(p) for p in path]])
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Philox generator for the given (seed, index...) stream."""
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))
