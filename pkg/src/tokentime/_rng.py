"""Named, independently reproducible random sub-streams derived from one root seed."""
from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, name: str, *keys: object) -> int:
    material = "\x1f".join([str(int(seed)), name, *map(str, keys)])
    return int.from_bytes(hashlib.sha256(material.encode()).digest()[:8], "big")


def substream(seed: int, name: str, *keys: object) -> random.Random:
    """Return a ``random.Random`` keyed by ``(seed, name, *keys)``.

    Streams with different names never share state, so e.g. the bomb's walk
    is unaffected by how many draws map generation needed.
    """
    return random.Random(derive_seed(seed, name, *keys))
