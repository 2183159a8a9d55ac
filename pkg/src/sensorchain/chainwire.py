"""Wire formats for chain signatures and signer state.

Signature (big-endian throughout)::

    [1B version = 0x01][1B mode: 0x00 full / 0x01 compressed]
    [4B index_hint][sigma1, lam/8 bytes, full mode only][sigma2, lam/8 bytes]

Signer-state file::

    [4B magic "BBCS"][1B version = 0x01][1B lam/32][8B n][8B ctr]
    [2B pebble count][(8B position, lam/8-byte digest) per pebble]
    [lam/8-byte pk]

Pebble positions are hash distances from the public commitment
(``h^position(value) == pk``), listed in the canonical order of
:func:`sensorchain.pebbles.expected_layout`; the walk schedule itself is
a pure function of ``(n, ctr)``, so no travel metadata is stored.
"""

from __future__ import annotations

import struct

from .chainsig import (
    SIG_MODE_COMPRESSED,
    SIG_MODE_FULL,
    ChainKeyState,
    ChainSignature,
)
from .errors import DecodeError
from .hashing import SUPPORTED_LAMBDAS, Hasher
from .pebbles import Traversal, expected_layout

SIG_VERSION = 0x01
STATE_MAGIC = b"BBCS"
STATE_VERSION = 0x01


def encode_signature(sig: ChainSignature, lam: int = 256) -> bytes:
    mode = SIG_MODE_COMPRESSED if sig.compressed else SIG_MODE_FULL
    out = struct.pack(">BBI", SIG_VERSION, mode, sig.index_hint)
    if not sig.compressed:
        out += sig.sigma1
    out += sig.sigma2
    return out


def decode_signature(data: bytes, lam: int = 256) -> ChainSignature:
    size = lam // 8
    if len(data) < 6:
        raise DecodeError("signature too short")
    version, mode, hint = struct.unpack(">BBI", data[:6])
    if version != SIG_VERSION:
        raise DecodeError(f"unknown signature version {version:#x}")
    body = data[6:]
    if mode == SIG_MODE_FULL:
        if len(body) != 2 * size:
            raise DecodeError(
                f"full signature body must be {2 * size} bytes, "
                f"got {len(body)}"
            )
        return ChainSignature(sigma1=body[:size], sigma2=body[size:],
                              index_hint=hint)
    if mode == SIG_MODE_COMPRESSED:
        if len(body) != size:
            raise DecodeError(
                f"compressed signature body must be {size} bytes, "
                f"got {len(body)}"
            )
        return ChainSignature(sigma1=None, sigma2=body, index_hint=hint)
    raise DecodeError(f"unknown signature mode {mode:#x}")


def compress(sig: ChainSignature) -> ChainSignature:
    return ChainSignature(sigma1=None, sigma2=sig.sigma2,
                          index_hint=sig.index_hint)


def serialize_signer_state(state: ChainKeyState) -> bytes:
    pebbles = state.pebble_items()
    out = bytearray()
    out += STATE_MAGIC
    out += struct.pack(">BB", STATE_VERSION, state.lam // 32)
    out += struct.pack(">QQ", state.n, state.ctr)
    out += struct.pack(">H", len(pebbles))
    for pos, value in pebbles:
        out += struct.pack(">Q", pos)
        out += value
    out += state.pk
    return bytes(out)


def deserialize_signer_state(data: bytes) -> ChainKeyState:
    if len(data) < 24 or data[:4] != STATE_MAGIC:
        raise DecodeError("not a signer-state file")
    version, lam32 = struct.unpack(">BB", data[4:6])
    if version != STATE_VERSION:
        raise DecodeError(f"unknown state version {version:#x}")
    lam = lam32 * 32
    if lam not in SUPPORTED_LAMBDAS:
        raise DecodeError(f"unsupported lambda {lam}")
    size = lam // 8
    n, ctr = struct.unpack(">QQ", data[6:22])
    if n < 1 or ctr > n:
        raise DecodeError(f"inconsistent n={n} ctr={ctr}")
    (count,) = struct.unpack(">H", data[22:24])
    offset = 24
    need = count * (8 + size) + size
    if len(data) != offset + need:
        raise DecodeError(
            f"state file length {len(data)} does not match "
            f"{count} pebbles at lambda={lam}"
        )
    layout = expected_layout(n, ctr)
    if len(layout) != count:
        raise DecodeError(
            f"pebble count {count} does not match schedule for "
            f"n={n} ctr={ctr} (expected {len(layout)})"
        )
    values = []
    for _, pos, _, _ in layout:
        (stored_pos,) = struct.unpack(">Q", data[offset:offset + 8])
        offset += 8
        if stored_pos != pos:
            raise DecodeError(
                f"pebble position {stored_pos} does not match "
                f"schedule position {pos}"
            )
        values.append(data[offset:offset + size])
        offset += size
    pk = data[offset:offset + size]
    traversal = Traversal.restore(n, ctr, values)
    return ChainKeyState(
        n=n, ctr=ctr, pk=pk, lam=lam, traversal=traversal,
        hasher=Hasher(lam),
    )
