"""Per-stage seed derivation from one top-level seed.

``derive_seed(seed, "split")`` hashes the pair with SHA-256 and keeps the first
8 bytes, so each stage gets an independent stream and re-running one stage
alone reproduces exactly what a full run would have used.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stage))
