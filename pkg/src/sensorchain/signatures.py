"""Conventional signatures and sealed-box encryption for capable nodes.

Aggregators, orderers, admins, and the MSP sign with Ed25519 behind
this thin interface; sensors never touch it.  Sensor hand-over state is
sealed to the receiving aggregator with an ephemeral X25519 exchange
plus AES-GCM, so only the addressed aggregator can open it.

Key generation accepts an explicit 32-byte seed so simulation actors
derive their keys deterministically from the scenario seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import TransferFailed


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 signing keypair; ``public`` is the raw 32-byte key."""

    public: bytes
    _private: Ed25519PrivateKey

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "KeyPair":
        if seed is None:
            seed = os.urandom(32)
        private = Ed25519PrivateKey.from_private_bytes(seed)
        public = private.public_key().public_bytes_raw()
        return cls(public=public, _private=private)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class BoxKeyPair:
    """X25519 keypair for receiving sealed state transfers."""

    public: bytes
    _private: X25519PrivateKey

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "BoxKeyPair":
        if seed is None:
            seed = os.urandom(32)
        private = X25519PrivateKey.from_private_bytes(seed)
        public = private.public_key().public_bytes_raw()
        return cls(public=public, _private=private)


def _box_key(shared: bytes, ephemeral_pub: bytes, recipient_pub: bytes
             ) -> bytes:
    return HKDF(
        algorithm=SHA256(), length=32, salt=None,
        info=b"sensorchain-sealed-box" + ephemeral_pub + recipient_pub,
    ).derive(shared)


def seal(recipient_public: bytes, plaintext: bytes,
         ephemeral_seed: bytes | None = None) -> bytes:
    """Encrypt ``plaintext`` so only the holder of the matching private
    key can read it; output is ``ephemeral_pub || nonce || ciphertext``."""
    if ephemeral_seed is None:
        ephemeral_seed = os.urandom(32)
    ephemeral = X25519PrivateKey.from_private_bytes(ephemeral_seed)
    ephemeral_pub = ephemeral.public_key().public_bytes_raw()
    shared = ephemeral.exchange(
        X25519PublicKey.from_public_bytes(recipient_public)
    )
    key = _box_key(shared, ephemeral_pub, recipient_public)
    nonce = bytes(12)  # key is single-use (fresh ephemeral per box)
    ciphertext = AESGCM(key).encrypt(nonce, plaintext, None)
    return ephemeral_pub + nonce + ciphertext


def unseal(recipient: BoxKeyPair, box: bytes) -> bytes:
    if len(box) < 32 + 12 + 16:
        raise TransferFailed("sealed box too short")
    ephemeral_pub, nonce, ciphertext = box[:32], box[32:44], box[44:]
    shared = recipient._private.exchange(
        X25519PublicKey.from_public_bytes(ephemeral_pub)
    )
    key = _box_key(shared, ephemeral_pub, recipient.public)
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise TransferFailed("sealed box not addressed to this key") from exc
