"""Canonical length-prefixed binary encoding.

Every ledger and consensus structure hashes and signs over these bytes,
so the encoding must be deterministic: big-endian fixed-width integers
and 4-byte length prefixes for variable-size fields and lists.
"""

from __future__ import annotations

import struct

from .errors import DecodeError


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">Q", value))
        return self

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(data)
        return self

    def blob(self, data: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(data)))
        self._parts.append(data)
        return self

    def blob_list(self, items: list[bytes]) -> "Writer":
        self.u32(len(items))
        for item in items:
            self.blob(item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, count: int) -> bytes:
        if self._pos + count > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos:self._pos + count]
        self._pos += count
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, count: int) -> bytes:
        return self._take(count)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def blob_list(self) -> list[bytes]:
        return [self.blob() for _ in range(self.u32())]

    def expect_end(self):
        if self._pos != len(self._data):
            raise DecodeError(
                f"{len(self._data) - self._pos} trailing bytes"
            )
