"""Deterministic random-stream derivation.

Every stochastic component (FLEXOR restarts, bootstrap replicates,
simulation replicates) draws from a child stream addressed by a tuple
``(seed, tag, index, ...)``. Streams are independent of execution order,
so replicates can run in any order or in parallel and still reproduce
bit-identical results. Tags keep the different consumers from colliding
on the same child stream.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Arbitrary but fixed; changing them changes all seeded output.
FLEXOR_STREAM = 101
BOOTSTRAP_STREAM = 202
SIM_STREAM = 303
CLUSTER_STREAM = 404
TRUTH_STREAM = 505

SeedPath = tuple[int, ...]


def materialize_seed(seed: int | None) -> int:
    """Return ``seed`` itself, or a fresh entropy-derived seed if None."""
    if seed is None:
        return int(np.random.SeedSequence().entropy % (2**63))
    return int(seed)


def spawn_rng(path: SeedPath) -> np.random.Generator:
    """Generator for the child stream addressed by ``path``."""
    return np.random.default_rng(np.random.SeedSequence(list(path)))
