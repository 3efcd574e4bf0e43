"""Deterministic random-stream derivation.

Every source of randomness in a run is a stream derived from the master seed
plus a tuple of integer labels (purpose, task, round, client, ...).  The
labels are hashed into a Philox counter-based generator key, so streams are
independent of each other and of execution order: running clients in
parallel, or skipping a client entirely, never perturbs anyone else's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Purpose labels, first element of every derivation tuple.
INIT_PARAMS = 0
TASK_DATA = 1
PARTITION = 2
CLIENT_SAMPLING = 3
LOCAL_TRAINING = 4
PROBE_POINT = 5
PROBE_BATCH = 6


def derive_stream(master_seed: int, labels: tuple[int, ...] | list[int]) -> np.random.Generator:
    """Return a Generator keyed by SHA-256(master_seed || labels).

    Distinct (seed, labels) tuples give statistically independent streams;
    identical tuples give identical streams.  Label order matters.
    """
    h = hashlib.sha256()
    h.update(int(master_seed).to_bytes(16, "big", signed=True))
    for label in labels:
        h.update(int(label).to_bytes(16, "big", signed=True))
    digest = h.digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
