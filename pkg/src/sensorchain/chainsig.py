"""Chain-based one-time signatures with gap-tolerant bounded verification.

A signer key is a hash chain of length ``n`` grown from a random seed:
the public commitment is ``pk = h^n(seed)`` and the ``i``-th signature
reveals the chain element ``k_i`` at distance ``i`` from ``pk``
(``h^i(k_i) = pk``) together with a binding digest over the message and
the previous element.  Verifiers keep only an *anchor* -- the most
recently accepted element -- and connect each new ``k_i`` to it by
re-hashing, so a gap of ``g`` lost signatures costs exactly ``g + 1``
extra hash applications and no clock synchronization is ever needed.

The walk back to the anchor is capped by ``max_verifications`` so a
flood of garbage signatures costs an adversary's victim a bounded
number of hash operations per message.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import ChainExhausted, InvalidParameter
from .hashing import DEFAULT_LAMBDA, Hasher
from .pebbles import Traversal, ceil_log2

DEFAULT_MAX_VERIFICATIONS = 10_000

SIG_MODE_FULL = 0x00
SIG_MODE_COMPRESSED = 0x01


@dataclass
class ChainSignature:
    """``sigma1 = h(len(m) || m || k_{i-1})`` and ``sigma2 = k_i``.

    ``index_hint`` is the signer's counter at signing time.  It is
    carried on the wire for diagnostics only; verification derives all
    trust from the chain walk and never reads it.  In compressed form
    ``sigma1`` is omitted and the verifier recomputes it from its own
    reconstruction of ``k_{i-1} = h(sigma2)``.
    """

    sigma1: bytes | None
    sigma2: bytes
    index_hint: int = 0

    @property
    def compressed(self) -> bool:
        return self.sigma1 is None


@dataclass
class ChainKeyState:
    """Signer-side state: counter plus the live pebbles.

    Not safe for concurrent signers; ``ot_sign`` mutates the pebble set
    in place.  The seed is erased at key generation -- only pebbles
    persist, the deepest of which is the seed itself until the final
    signature consumes it.
    """

    n: int
    ctr: int
    pk: bytes
    lam: int
    traversal: Traversal
    hasher: Hasher = field(repr=False)
    last_sign_traversal_ops: int = 0

    @property
    def exhausted(self) -> bool:
        return self.ctr >= self.n

    @property
    def remaining(self) -> int:
        return self.n - self.ctr

    def pebble_items(self) -> list[tuple[int, bytes]]:
        """Canonically ordered ``(position, value)`` pairs."""
        return [(p.pos, p.value) for p in self.traversal.pebbles]


class RejectReason(Enum):
    ANCHOR_NOT_REACHED = "AnchorNotReached"
    BINDING_MISMATCH = "BindingMismatch"


@dataclass(frozen=True)
class VerifierState:
    """Receiver-side state: the rolling anchor and the walk bound.

    The anchor starts at the signer's ``pk`` and only ever advances to
    values whose iterated hash reaches the previous anchor.
    """

    anchor: bytes
    max_verifications: int = DEFAULT_MAX_VERIFICATIONS
    lam: int = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.max_verifications < 1:
            raise InvalidParameter("max_verifications must be positive")


@dataclass(frozen=True)
class VerifyResult:
    accept: bool
    state: VerifierState
    walk_length: int        # hash applications to reach the anchor (0 on reject)
    hash_ops: int           # total hashes spent, chain walk + binding
    reason: RejectReason | None = None


def _binding_digest(hasher: Hasher, message: bytes, prev_key: bytes) -> bytes:
    # 8-byte big-endian length prefix removes the message/key boundary
    # ambiguity of bare concatenation.
    return hasher.digest(
        struct.pack(">Q", len(message)) + message + prev_key
    )


def ot_keygen(n: int, seed: bytes | None = None, lam: int = DEFAULT_LAMBDA
              ) -> tuple[bytes, ChainKeyState]:
    """Generate an ``n``-signature chain; returns ``(pk, state)``.

    ``seed`` defaults to ``lam`` fresh random bits and must be exactly
    ``lam / 8`` bytes when supplied: the seed is itself the deepest
    pebble and the final signature's ``sigma2``, both of which are
    fixed-size digests.  Key generation walks the chain once (``n``
    hashes), which is intended to run on a capable device; the returned
    state holds only the pebbles.
    """
    if n < 1:
        raise InvalidParameter("chain length must be at least 1")
    if seed is None:
        seed = os.urandom(lam // 8)
    if len(seed) != lam // 8:
        raise InvalidParameter(
            f"seed must be exactly {lam // 8} bytes for lambda={lam}"
        )
    hasher = Hasher(lam)
    pk, traversal = Traversal.from_seed(seed, n, hasher)
    state = ChainKeyState(
        n=n, ctr=0, pk=pk, lam=lam, traversal=traversal, hasher=hasher
    )
    return pk, state


def ot_sign(state: ChainKeyState, message: bytes) -> ChainSignature:
    """Sign ``message`` with the next one-time key, advancing the state.

    Traversal spends at most ``ceil(log2 n)`` hash applications; the
    binding digest and the ``k_{i-1}`` reconstruction add two more.
    """
    if state.exhausted:
        raise ChainExhausted(
            f"all {state.n} one-time keys consumed; re-run the join protocol"
        )
    hasher = state.hasher
    before = hasher.ops
    key = state.traversal.next_key(hasher)       # k_i
    state.last_sign_traversal_ops = hasher.ops - before
    prev_key = hasher.digest(key)                # k_{i-1} = h(k_i)
    sigma1 = _binding_digest(hasher, message, prev_key)
    state.ctr = state.traversal.ctr
    return ChainSignature(sigma1=sigma1, sigma2=key, index_hint=state.ctr)


def make_verifier(pk: bytes, max_verifications: int = DEFAULT_MAX_VERIFICATIONS,
                  lam: int = DEFAULT_LAMBDA) -> VerifierState:
    return VerifierState(anchor=pk, max_verifications=max_verifications,
                         lam=lam)


def ot_verify(vstate: VerifierState, message: bytes, sig: ChainSignature,
              ) -> VerifyResult:
    """Bounded anchor verification; pure in ``(vstate, message, sig)``.

    Accepts iff some ``1 <= j <= max_verifications`` satisfies
    ``h^j(sigma2) == anchor`` and the binding digest matches.  On
    acceptance the returned state's anchor advances to ``sigma2``; on
    rejection the input state is returned unchanged.
    """
    hasher = Hasher(vstate.lam)
    value = sig.sigma2
    walk = 0
    found = False
    for j in range(1, vstate.max_verifications + 1):
        value = hasher.digest(value)
        if j == 1:
            prev_key = value  # h(sigma2) = k_{i-1}, reused by the binding
        if value == vstate.anchor:
            walk = j
            found = True
            break
    if not found:
        return VerifyResult(False, vstate, 0, hasher.ops,
                            RejectReason.ANCHOR_NOT_REACHED)
    expected = _binding_digest(hasher, message, prev_key)
    if not sig.compressed and sig.sigma1 != expected:
        return VerifyResult(False, vstate, 0, hasher.ops,
                            RejectReason.BINDING_MISMATCH)
    new_state = replace(vstate, anchor=sig.sigma2)
    return VerifyResult(True, new_state, walk, hasher.ops, None)


def traversal_budget(n: int) -> int:
    """Worst-case hash applications one ``ot_sign`` may spend deriving keys."""
    return ceil_log2(n)
