"""Counter-based seed derivation so pipeline stages get independent streams."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, tag: str) -> int:
    """Deterministic per-stage seed: hash of the global seed plus a stage tag."""
    digest = hashlib.sha256(f"{global_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63 - 1)


def derived_rng(global_seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, tag))
