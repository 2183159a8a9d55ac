"""Truncated SHA-256 with an operation counter.

All chain-signature material is hashed with SHA-256 truncated to
``lam / 8`` bytes.  Truncation only narrows the digest; it never changes
the first bytes, so a 256-bit chain and its 128-bit truncation disagree
from the first hash application onward (different input lengths).

Counters are per-``Hasher`` so that call sites (pebble traversal,
signature binding, verifier chain walk) can be metered independently.
"""

from __future__ import annotations

import hashlib

SUPPORTED_LAMBDAS = (64, 128, 256)
DEFAULT_LAMBDA = 256


class Hasher:
    """SHA-256 truncated to ``lam // 8`` bytes, counting every call."""

    __slots__ = ("lam", "digest_size", "ops")

    def __init__(self, lam: int = DEFAULT_LAMBDA):
        if lam not in SUPPORTED_LAMBDAS:
            raise ValueError(f"unsupported security parameter: {lam}")
        self.lam = lam
        self.digest_size = lam // 8
        self.ops = 0

    def digest(self, data: bytes) -> bytes:
        self.ops += 1
        return hashlib.sha256(data).digest()[: self.digest_size]

    def iterate(self, value: bytes, count: int) -> bytes:
        for _ in range(count):
            value = self.digest(value)
        return value


def check_digest(value: bytes, lam: int) -> bytes:
    """Validate that ``value`` has the digest length implied by ``lam``."""
    if len(value) != lam // 8:
        raise ValueError(
            f"digest length {len(value)} does not match lambda={lam}"
        )
    return value
