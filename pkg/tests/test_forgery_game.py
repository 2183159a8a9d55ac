"""Unforgeability game tests (the 10^5-trial run lives in acceptance)."""

import random

import hashlib

from helpers import binding, run_forgery_game, unbounded_verify, _h
from sensorchain.chainsig import (
    ChainSignature,
    make_verifier,
    ot_keygen,
    ot_sign,
    ot_verify,
)


def test_no_forgeries_small_run():
    stats = run_forgery_game(2_000, random.Random(11))
    assert stats.accepted == 0


def test_broken_verifier_admits_replays():
    stats = run_forgery_game(500, random.Random(11), check_binding=False)
    assert stats.accepted > 0
    # every forgery the broken verifier admits reuses a revealed key;
    # fresh-key forgeries stay impossible even without the binding check
    assert stats.accepted_fresh_key == 0


def test_rebound_key_reuse_explains_the_game_exclusion():
    """Re-binding a revealed key to a new message defeats the stateless
    from-pk verifier (the formal game therefore excludes reused keys);
    the deployed rolling anchor rejects the same forgery."""
    pk, state = ot_keygen(8, b"\x21" * 32)
    v = make_verifier(pk)
    m1 = b"reading-1"
    sig1 = ot_sign(state, m1)
    res = ot_verify(v, m1, sig1)
    assert res.accept
    v = res.state

    fresh = b"attacker-data"
    rebound = ChainSignature(
        sigma1=binding(fresh, _h(sig1.sigma2)),
        sigma2=sig1.sigma2,
    )
    # stateless verification from pk cannot tell the key was consumed
    assert unbounded_verify(pk, fresh, rebound, 8)
    # the anchor has moved past k_1, so the walk can never reach it
    replay = ot_verify(v, fresh, rebound)
    assert not replay.accept


def test_oracle_signatures_always_verify():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randrange(1, 12)
        pk, state = ot_keygen(n, rng.randbytes(32))
        for i in range(n):
            m = b"m%d" % i
            sig = ot_sign(state, m)
            assert unbounded_verify(pk, m, sig, n)


def test_unbounded_oracle_rejects_unrelated_chain():
    pk, _ = ot_keygen(8, b"\x31" * 32)
    _, other = ot_keygen(8, b"\x32" * 32)
    sig = ot_sign(other, b"m")
    assert not unbounded_verify(pk, b"m", sig, 8)
