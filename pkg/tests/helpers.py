"""Shared test instruments: unbounded verification and the forgery game.

The unbounded verifier walks sigma2 all the way to pk instead of using
the rolling anchor; it exists only here, as the scheme-level oracle the
signing path is judged against.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass

from sensorchain.chainsig import ChainSignature, ot_keygen, ot_sign


def _h(data: bytes, lam: int = 256) -> bytes:
    return hashlib.sha256(data).digest()[: lam // 8]


def binding(message: bytes, prev_key: bytes, lam: int = 256) -> bytes:
    return _h(struct.pack(">Q", len(message)) + message + prev_key, lam)


def unbounded_verify(pk: bytes, message: bytes, sig: ChainSignature,
                     n: int, lam: int = 256, check_binding: bool = True
                     ) -> bool:
    """Accept iff some j in [1, n] links sigma2 to pk and (optionally)
    the binding digest matches.  ``check_binding=False`` is the
    deliberately broken verifier used to prove the game has teeth."""
    value = sig.sigma2
    for _ in range(n):
        value = _h(value, lam)
        if value == pk:
            if not check_binding:
                return True
            prev = _h(sig.sigma2, lam)
            return sig.sigma1 == binding(message, prev, lam)
    return False


@dataclass
class GameStats:
    trials: int
    attempts: int
    accepted: int
    accepted_fresh_key: int  # accepted with sigma2 outside revealed keys


def run_forgery_game(trials: int, rng: random.Random, n: int = 8,
                     check_binding: bool = True) -> GameStats:
    """OTSigForge: adversary with q <= n-1 oracle answers tries one
    forgery per trial; a forgery counts when the verifier accepts a
    never-queried message.

    The adversary portfolio deliberately covers replayed signatures on
    fresh messages (rejected only by the binding check) alongside
    guessing strategies, but never the correctly-rebound key-reuse
    forgery, which the formal game excludes via the revealed-key rule.
    """
    attempts = accepted = accepted_fresh = 0
    size = 32
    for t in range(trials):
        seed = rng.randbytes(size)
        pk, state = ot_keygen(n, seed)
        q = rng.randrange(1, n)  # q <= n - 1
        queries = []
        for i in range(q):
            m = b"query-%d-%d" % (t, i)
            queries.append((m, ot_sign(state, m)))
        revealed = {sig.sigma2 for _, sig in queries}
        fresh_m = b"forged-%d" % t
        strategy = rng.randrange(5)
        if strategy == 0:      # random guess for both halves
            forged = ChainSignature(rng.randbytes(size), rng.randbytes(size))
        elif strategy == 1:    # random key, correctly formed binding
            s2 = rng.randbytes(size)
            forged = ChainSignature(binding(fresh_m, _h(s2)), s2)
        elif strategy == 2:    # bit-flipped revealed key
            _, sig = queries[rng.randrange(q)]
            s2 = bytearray(sig.sigma2)
            s2[rng.randrange(size)] ^= 1 << rng.randrange(8)
            forged = ChainSignature(binding(fresh_m, _h(bytes(s2))),
                                    bytes(s2))
        elif strategy == 3:    # pk or its hash: values past the chain head
            s2 = pk if rng.random() < 0.5 else _h(pk)
            forged = ChainSignature(binding(fresh_m, _h(s2)), s2)
        else:                  # naive replay: old sigma on a fresh message
            _, sig = queries[rng.randrange(q)]
            forged = ChainSignature(sig.sigma1, sig.sigma2)
        attempts += 1
        if unbounded_verify(pk, fresh_m, forged, n,
                            check_binding=check_binding):
            accepted += 1
            if forged.sigma2 not in revealed:
                accepted_fresh += 1
    return GameStats(trials, attempts, accepted, accepted_fresh)
