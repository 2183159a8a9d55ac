"""Chain signature scheme tests against a naive full-chain oracle."""

import hashlib
import struct

import pytest

from sensorchain.chainsig import (
    ChainSignature,
    RejectReason,
    make_verifier,
    ot_keygen,
    ot_sign,
    ot_verify,
    traversal_budget,
)
from sensorchain.errors import ChainExhausted, InvalidParameter
from sensorchain.pebbles import ceil_log2, max_pebbles

# Independently computed: 4-fold SHA-256 of 32 zero bytes.
PK_N4_ZERO_SEED = bytes.fromhex(
    "fe15c0d3ebe314fad720a08b839a004c2e6386f5aecc19ec74807d1920cb6aeb"
)


def naive_chain(seed: bytes, n: int, lam: int = 256) -> list[bytes]:
    """Oracle: all chain elements [k_n=seed, ..., k_1, k_0=pk] by distance.

    Returned list is indexed by distance from pk: element [d] satisfies
    h^d(element) = pk, so [0] is pk and [n] is the seed.
    """
    size = lam // 8
    out = [seed]
    value = seed
    for _ in range(n):
        value = hashlib.sha256(value).digest()[:size]
        out.append(value)
    out.reverse()
    return out


def oracle_sigma1(message: bytes, prev_key: bytes, lam: int = 256) -> bytes:
    data = struct.pack(">Q", len(message)) + message + prev_key
    return hashlib.sha256(data).digest()[: lam // 8]


def unbounded_verify(pk: bytes, message: bytes, sig: ChainSignature,
                     n: int, lam: int = 256) -> bool:
    """The unbounded form: walk sigma2 all the way to pk (test-only)."""
    size = lam // 8
    value = sig.sigma2
    for _ in range(n):
        value = hashlib.sha256(value).digest()[:size]
        if value == pk:
            prev = hashlib.sha256(sig.sigma2).digest()[:size]
            return sig.sigma1 == oracle_sigma1(message, prev, lam)
    return False


class TestKeygen:
    def test_figure_example_n5(self):
        # pk = h(h(h(h(h(seed))))) and the first key pair is (k0, k1)
        seed = b"\x05" * 32
        chain = naive_chain(seed, 5)
        pk, state = ot_keygen(5, seed)
        assert pk == chain[0]
        sig = ot_sign(state, b"m1")
        assert sig.sigma2 == chain[1]
        prev = hashlib.sha256(chain[1]).digest()
        assert prev == chain[0] == pk
        assert sig.sigma1 == oracle_sigma1(b"m1", pk)

    def test_degenerate_chain_n1(self):
        seed = hashlib.sha256(b"s").digest()
        pk, state = ot_keygen(1, seed)
        assert pk == hashlib.sha256(seed).digest()
        ot_sign(state, b"only")
        with pytest.raises(ChainExhausted):
            ot_sign(state, b"again")

    def test_zero_seed_n4_frozen_digest(self):
        pk, _ = ot_keygen(4, bytes(32))
        assert pk == PK_N4_ZERO_SEED

    def test_n_zero_rejected(self):
        with pytest.raises(InvalidParameter):
            ot_keygen(0, b"x")

    def test_empty_seed_rejected(self):
        with pytest.raises(InvalidParameter):
            ot_keygen(4, b"")

    def test_random_seed_has_lambda_bits(self):
        pk, state = ot_keygen(8)
        assert len(pk) == 32
        assert state.n == 8 and state.ctr == 0

    @pytest.mark.parametrize("lam", [64, 128, 256])
    def test_truncated_lambdas(self, lam):
        seed = b"\xaa" * (lam // 8)
        pk, state = ot_keygen(6, seed, lam=lam)
        assert len(pk) == lam // 8
        assert pk == naive_chain(seed, 6, lam)[0]


class TestSigningAgainstOracle:
    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 17, 64, 100, 256, 1024])
    def test_every_key_matches_naive_recomputation(self, n):
        seed = hashlib.sha256(f"seed-{n}".encode()).digest()
        chain = naive_chain(seed, n)
        _, state = ot_keygen(n, seed)
        for i in range(1, n + 1):
            sig = ot_sign(state, b"msg%d" % i)
            assert sig.sigma2 == chain[i], f"key {i} of {n}"
            assert sig.index_hint == i

    def test_chain_links_hash_to_predecessor(self):
        # every returned k_i satisfies h(k_i) = previous k_{i-1}
        n = 1024
        pk, state = ot_keygen(n, b"\x07" * 32)
        prev = pk
        for i in range(n):
            sig = ot_sign(state, b"x")
            assert hashlib.sha256(sig.sigma2).digest() == prev
            prev = sig.sigma2

    def test_exhaustion_after_n_signatures(self):
        _, state = ot_keygen(5, b"\x01" * 32)
        for _ in range(5):
            ot_sign(state, b"r")
        assert state.exhausted
        with pytest.raises(ChainExhausted):
            ot_sign(state, b"r")


class TestTraversalBounds:
    @pytest.mark.parametrize("n", [1, 2, 5, 16, 100, 1 << 10, 1 << 12])
    def test_hash_budget_and_pebble_count(self, n):
        _, state = ot_keygen(n, b"\x02" * 32)
        budget = traversal_budget(n)
        assert budget == ceil_log2(n)
        assert len(state.traversal.pebbles) <= max_pebbles(n)
        for _ in range(n):
            ot_sign(state, b"m")
            assert state.last_sign_traversal_ops <= budget
            assert len(state.traversal.pebbles) <= max_pebbles(n)

    def test_keygen_hash_count_is_n(self):
        n = 500
        _, state = ot_keygen(n, b"\x03" * 32)
        assert state.hasher.ops == n


class TestVerify:
    def setup_method(self):
        self.pk, self.state = ot_keygen(64, b"\x04" * 32)
        self.verifier = make_verifier(self.pk, max_verifications=10)

    def test_consecutive_walk_length_one(self):
        v = self.verifier
        for i in range(10):
            sig = ot_sign(self.state, b"m%d" % i)
            res = ot_verify(v, b"m%d" % i, sig)
            assert res.accept and res.walk_length == 1
            # steady state: one chain-walk hash plus one binding hash
            assert res.hash_ops == 2
            v = res.state

    @pytest.mark.parametrize("gap", [1, 3, 9])
    def test_gap_walk_length(self, gap):
        v = self.verifier
        for _ in range(gap):
            ot_sign(self.state, b"lost")
        sig = ot_sign(self.state, b"kept")
        res = ot_verify(v, b"kept", sig)
        assert res.accept
        assert res.walk_length == gap + 1

    def test_gap_at_max_verifications_rejected(self):
        v = self.verifier  # max_verifications=10
        for _ in range(10):
            ot_sign(self.state, b"lost")
        sig = ot_sign(self.state, b"kept")
        res = ot_verify(v, b"kept", sig)
        assert not res.accept
        assert res.reason is RejectReason.ANCHOR_NOT_REACHED
        assert res.state == v

    def test_tampered_message_rejected(self):
        sig = ot_sign(self.state, b"genuine")
        res = ot_verify(self.verifier, b"tampered", sig)
        assert not res.accept
        assert res.reason is RejectReason.BINDING_MISMATCH

    def test_tampered_sigma1_rejected(self):
        sig = ot_sign(self.state, b"genuine")
        bad = ChainSignature(
            sigma1=bytes(32), sigma2=sig.sigma2, index_hint=sig.index_hint
        )
        res = ot_verify(self.verifier, b"genuine", bad)
        assert not res.accept
        assert res.reason is RejectReason.BINDING_MISMATCH

    def test_index_hint_is_ignored(self):
        sig = ot_sign(self.state, b"m")
        forged_hint = ChainSignature(
            sigma1=sig.sigma1, sigma2=sig.sigma2, index_hint=999
        )
        res = ot_verify(self.verifier, b"m", forged_hint)
        assert res.accept

    def test_anchor_advances_only_on_accept(self):
        sig = ot_sign(self.state, b"m")
        ok = ot_verify(self.verifier, b"m", sig)
        assert ok.state.anchor == sig.sigma2
        bad = ot_verify(self.verifier, b"other", sig)
        assert bad.state.anchor == self.pk

    def test_matches_unbounded_oracle(self):
        v = self.verifier
        for i in range(5):
            m = b"msg%d" % i
            sig = ot_sign(self.state, m)
            res = ot_verify(v, m, sig)
            assert res.accept == unbounded_verify(self.pk, m, sig, 64)
            v = res.state
