"""Labeled seed derivation so adding a component never shifts other streams."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
