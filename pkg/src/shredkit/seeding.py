"""Deterministic fan-out of one master seed to named components."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed for a component, from the master seed and labels.

    Hash-based so it is independent of process state and insertion order of
    other components; the same (master, labels) always yields the same seed.
    """
    key = "/".join([str(int(master))] + [str(l) for l in labels])
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
