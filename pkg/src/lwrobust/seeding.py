"""Derivation of per-component seeds from one top-level seed.

``derive_seed(seed, tag)`` feeds ``[seed, crc32(tag)]`` to numpy's
``SeedSequence`` and takes the first 63 bits of its state. Tags are plain
strings such as ``"corpus"``, ``"split"`` or ``"train/2"``.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, tag: str) -> int:
    ss = np.random.SeedSequence([int(seed) % 2**63, zlib.crc32(tag.encode("utf-8"))])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
