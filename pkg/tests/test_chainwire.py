"""Wire format and state serialization tests."""

import pytest

from sensorchain.chainsig import ChainSignature, make_verifier, ot_keygen, \
    ot_sign, ot_verify
from sensorchain.chainwire import (
    compress,
    decode_signature,
    deserialize_signer_state,
    encode_signature,
    serialize_signer_state,
)
from sensorchain.errors import DecodeError
from sensorchain.pebbles import max_pebbles


class TestSignatureWire:
    def test_full_layout(self):
        sig = ChainSignature(sigma1=b"\x11" * 32, sigma2=b"\x22" * 32,
                             index_hint=7)
        data = encode_signature(sig)
        assert data[0] == 0x01          # version
        assert data[1] == 0x00          # full mode
        assert data[2:6] == (7).to_bytes(4, "big")
        assert data[6:38] == b"\x11" * 32
        assert data[38:70] == b"\x22" * 32
        assert len(data) == 6 + 64      # sigma1 || sigma2 is exactly 64 bytes

    def test_compressed_layout(self):
        sig = ChainSignature(sigma1=None, sigma2=b"\x22" * 32, index_hint=3)
        data = encode_signature(sig)
        assert data[1] == 0x01
        assert len(data) == 6 + 32

    def test_round_trip(self):
        sig = ChainSignature(sigma1=b"\xaa" * 32, sigma2=b"\xbb" * 32,
                             index_hint=41)
        assert decode_signature(encode_signature(sig)) == sig
        csig = compress(sig)
        assert decode_signature(encode_signature(csig)) == csig

    @pytest.mark.parametrize("lam", [64, 128])
    def test_truncated_round_trip(self, lam):
        size = lam // 8
        sig = ChainSignature(sigma1=b"\x01" * size, sigma2=b"\x02" * size)
        assert decode_signature(encode_signature(sig, lam), lam) == sig

    def test_malformed_rejected(self):
        with pytest.raises(DecodeError):
            decode_signature(b"\x01\x00")
        with pytest.raises(DecodeError):
            decode_signature(b"\x02" + bytes(69))   # bad version
        with pytest.raises(DecodeError):
            decode_signature(b"\x01\x07" + bytes(68))  # bad mode
        with pytest.raises(DecodeError):
            decode_signature(b"\x01\x00" + bytes(40))  # bad body size


class TestSignerState:
    def test_round_trip_is_byte_identical(self):
        _, state = ot_keygen(37, b"\x09" * 32)
        for _ in range(11):
            ot_sign(state, b"m")
        blob = serialize_signer_state(state)
        restored = deserialize_signer_state(blob)
        assert serialize_signer_state(restored) == blob

    def test_restored_state_signs_identically(self):
        pk, state = ot_keygen(64, b"\x0a" * 32)
        for _ in range(20):
            ot_sign(state, b"m")
        clone = deserialize_signer_state(serialize_signer_state(state))
        v1 = make_verifier(pk)
        v2 = make_verifier(pk)
        for i in range(20, 64):
            m = b"msg%d" % i
            s1 = ot_sign(state, m)
            s2 = ot_sign(clone, m)
            assert s1 == s2
            assert ot_verify(v1, m, s1).accept
            assert ot_verify(v2, m, s2).accept

    def test_restore_at_every_counter(self):
        n = 50
        pk, state = ot_keygen(n, b"\x0b" * 32)
        blobs = [serialize_signer_state(state)]
        sigs = []
        for i in range(n):
            sigs.append(ot_sign(state, b"m%d" % i))
            blobs.append(serialize_signer_state(state))
        for ctr, blob in enumerate(blobs[:-1]):
            clone = deserialize_signer_state(blob)
            assert clone.ctr == ctr
            assert ot_sign(clone, b"m%d" % ctr) == sigs[ctr]

    def test_size_bound_large_chain(self):
        # n = 2^20: at most 21 pebbles, so the pebble payload stays
        # within (ceil(log2 n)+1) * 32 = 672 bytes plus fixed framing.
        n = 1 << 20
        _, state = ot_keygen(n, b"\x0c" * 32)
        assert len(state.traversal.pebbles) == 21
        blob = serialize_signer_state(state)
        pebble_payload = len(state.traversal.pebbles) * (8 + 32)
        assert len(blob) <= (max_pebbles(n)) * (8 + 32) + 64
        assert len(blob) - pebble_payload <= 64  # framing incl. pk

    def test_reference_storage_floor(self):
        # 26 chain levels at 256 bits = 832 bytes is the digest-storage
        # floor for n = 2^26; 21 pebbles for 2^20 stay well under it.
        assert 26 * 256 // 8 == 832
        assert max_pebbles(1 << 20) * 32 == 672

    def test_malformed_state_rejected(self):
        _, state = ot_keygen(16, b"\x0d" * 32)
        blob = serialize_signer_state(state)
        with pytest.raises(DecodeError):
            deserialize_signer_state(b"XXXX" + blob[4:])
        with pytest.raises(DecodeError):
            deserialize_signer_state(blob[:-5])
        bad_count = bytearray(blob)
        bad_count[23] ^= 0x01
        with pytest.raises(DecodeError):
            deserialize_signer_state(bytes(bad_count))
