"""Canonical binary encoding primitives.

Every digested, signed, or stored protocol object serializes as its fields
concatenated in declared order using these rules:

* unsigned integers: big-endian fixed width (u8 / u32 / u64)
* floating point:    IEEE 754 binary64, big-endian (f64)
* byte strings:      u32 length prefix + raw bytes
* text:              u32 length prefix + UTF-8 bytes
* lists:             u32 element count prefix + concatenated elements

The layout is normative and bit-exact; frozen test vectors live in
tests/vectors/. Decoders consume from a Cursor and raise DecodeError on
truncated or malformed input.
"""

from __future__ import annotations

import struct

from .errors import DecodeError

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


def u8(value: int) -> bytes:
    return _U8.pack(value)


def u32(value: int) -> bytes:
    return _U32.pack(value)


def u64(value: int) -> bytes:
    return _U64.pack(value)


def f64(value: float) -> bytes:
    return _F64.pack(value)


def bytes_(value: bytes) -> bytes:
    return _U32.pack(len(value)) + value


def string(value: str) -> bytes:
    raw = value.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def list_(encoded_items: list[bytes]) -> bytes:
    return _U32.pack(len(encoded_items)) + b"".join(encoded_items)


class Cursor:
    """Sequential reader over a canonical byte sequence."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, n: int) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            raise DecodeError(
                f"need {n} bytes at offset {self.offset}, have {len(self.data) - self.offset}"
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self.take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def string(self) -> str:
        raw = self.bytes_()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 at offset {self.offset}") from exc

    def count(self) -> int:
        return self.u32()

    def done(self) -> bool:
        return self.offset == len(self.data)

    def expect_done(self) -> None:
        if not self.done():
            raise DecodeError(
                f"{len(self.data) - self.offset} trailing bytes after decode"
            )
