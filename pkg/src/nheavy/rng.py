"""Seeding conventions.

Every stochastic function in the package accepts a ``seed`` argument that
may be an int, a ``numpy.random.SeedSequence``, a ``numpy.random.Generator``,
or None (fresh OS entropy).  Replicated experiments split their seed with
``SeedSequence.spawn`` so that replication q always sees the same stream
regardless of worker count or execution order.
"""

import numpy as np


def as_generator(seed=None) -> np.random.Generator:
    """Return a PCG64 Generator for any accepted seed form."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, n: int) -> list:
    """Deterministically derive n child SeedSequences for replications.

    Child q is a pure function of (seed, q), so parallel and serial runs
    produce identical streams.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    return root.spawn(n)
