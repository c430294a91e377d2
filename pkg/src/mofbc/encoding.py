"""Hashing and the byte-level primitives used by every canonical encoding."""
from __future__ import annotations

import hashlib
import struct

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


def H(data: bytes) -> bytes:
    """The single ledger-wide hash (SHA3-256)."""
    return hashlib.sha3_256(data).digest()


class DecodeError(ValueError):
    pass


class Writer:
    """Append-only big-endian byte builder."""

    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def digest(self, d: bytes) -> "Writer":
        if len(d) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(d)}")
        self._parts.append(d)
        return self

    def var16(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">H", len(b)))
        self._parts.append(b)
        return self

    def var32(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(b)
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0) -> None:
        self._buf = memoryview(buf)
        self.pos = pos

    def _take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self._buf):
            raise DecodeError(f"truncated input: need {n} bytes at offset {self.pos}")
        out = bytes(self._buf[self.pos:end])
        self.pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def digest(self) -> bytes:
        return self._take(DIGEST_SIZE)

    def var16(self) -> bytes:
        return self._take(self.u16())

    def var32(self) -> bytes:
        return self._take(self.u32())

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def at_end(self) -> bool:
        return self.pos == len(self._buf)

    def expect_end(self) -> None:
        if not self.at_end():
            raise DecodeError(f"{len(self._buf) - self.pos} trailing bytes")
