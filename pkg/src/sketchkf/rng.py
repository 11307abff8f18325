"""Seeded random streams.

Every random draw in the package comes from a counter-based Philox
generator keyed by ``(seed, *key)``.  Keys are small integer tuples, e.g.
``(run, purpose, slot)``, so streams never overlap and results do not
depend on the order in which slots or runs are evaluated.
"""

from __future__ import annotations

import numpy as np

# Purpose codes used as the first element of spawn keys.
TRUTH = 1
MEASUREMENT = 2
PROCESS_NOISE = 3
MEASUREMENT_NOISE = 4
INITIAL_STATE = 5
RP_SKETCH = 10
RANDOM_SAMPLING = 11
GRAPH = 20
MONTE_CARLO_RUN = 30


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and integer ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed for the sub-experiment ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
