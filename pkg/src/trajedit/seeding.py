"""Deterministic seed derivation.

Every run hangs off one root seed. Sub-streams (data, init, noise, sampler,
per-iteration draws) are derived by hashing a label path, so resuming a run
at iteration k regenerates exactly the streams the uninterrupted run saw.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels: object) -> int:
    """Derive a 63-bit seed from a root seed and a label path."""
    key = "/".join([str(int(root))] + [str(l) for l in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
