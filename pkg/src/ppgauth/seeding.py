"""Deterministic sub-seed derivation.

All randomness in the package flows from one master seed. Components draw
their own sub-seeds via `derive_seed(master, *names)` so every stage
(corpus, training, evaluation) is independently reproducible. The
derivation is a SHA-256 hash of the master seed and the name path,
truncated to 63 bits, so it is stable across platforms and Python builds.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *names) -> int:
    """Derive a stable sub-seed from a master seed and a name path."""
    key = str(int(master_seed)) + "/" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def rng_for(master_seed: int, *names) -> np.random.Generator:
    """A PCG64 generator seeded from the derived sub-seed."""
    return np.random.default_rng(derive_seed(master_seed, *names))
