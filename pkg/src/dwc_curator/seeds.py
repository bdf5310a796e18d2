"""Single-seed policy: every stochastic phase derives its own sub-seed.

A run carries one integer seed; each phase asks for ``derive_seed(seed, label)``
with a fixed label string. Labels are part of the on-disk contract: renaming one
changes downstream randomness, so treat them like file formats.
"""

from __future__ import annotations

import hashlib
import random

_DIGEST_BYTES = 8


def derive_seed(seed: int, label: str) -> int:
    """Map (run seed, phase label) to a stable 64-bit sub-seed."""
    payload = f"{seed}:{label}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=_DIGEST_BYTES).digest()
    return int.from_bytes(digest, "little")


def derived_rng(seed: int, label: str) -> random.Random:
    """Convenience wrapper: a ``random.Random`` seeded via :func:`derive_seed`."""
    return random.Random(derive_seed(seed, label))


def stable_hash64(data: bytes) -> int:
    """Process-independent 64-bit content hash (``hash()`` is salted, this is not)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")
