"""Seeded random streams.

Every run owns one integer seed. Components draw from independent PCG64
sub-streams keyed by a fixed label (``"dataset"``, ``"init"``, ``"gumbel"``,
``"dropout"``, ``"eval"``), so changing how many numbers one component consumes
never shifts another component's draws.
"""

from __future__ import annotations

import zlib

import numpy as np

LABELS = ("dataset", "init", "gumbel", "dropout", "eval")


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for ``(seed, label, index)``."""
    key = zlib.crc32(label.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, int(index)))
    return np.random.Generator(np.random.PCG64(ss))
