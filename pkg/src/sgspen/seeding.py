"""Named, reproducible random streams.

All randomness in a run flows from one root seed; independent components
(data, init, inference, search, ...) pull named sub-streams so results stay
reproducible component-by-component even when other components change.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def stream(seed: int, *key) -> np.random.Generator:
    """Generator for the sub-stream named by `key` under `seed`.

    Keys mix strings (hashed stably) and non-negative integers, e.g.
    ``stream(seed, "search", epoch, example_index)``.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_part(p) for p in key))
    return np.random.default_rng(seq)
