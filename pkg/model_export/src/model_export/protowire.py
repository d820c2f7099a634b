"""Minimal protobuf wire-format primitives.

Only what the ONNX writer and reader need: varints, the four wire types
used by `onnx.proto` (varint, 64-bit, length-delimited, 32-bit), packed
repeated integers, and a generic field iterator for decoding.  Encoders
follow proto3 canonical form: fields are emitted in ascending field
number order and scalar fields equal to their default are omitted by
the callers.
"""

from __future__ import annotations

import struct
from typing import Iterator

WIRE_VARINT = 0
WIRE_FIXED64 = 1
WIRE_LEN = 2
WIRE_FIXED32 = 5

_U64_MASK = (1 << 64) - 1


def encode_uvarint(value: int) -> bytes:
    """Base-128 varint for a non-negative integer."""
    if value < 0:
        raise ValueError(f"uvarint requires a non-negative value, got {value}")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def encode_varint64(value: int) -> bytes:
    """Varint for a signed 64-bit integer (negatives use two's complement)."""
    if not -(1 << 63) <= value < (1 << 63):
        raise ValueError(f"value out of int64 range: {value}")
    return encode_uvarint(value & _U64_MASK)


def decode_uvarint(buf: bytes, pos: int) -> tuple[int, int]:
    """Return (value, next position); raises ValueError on truncation."""
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ValueError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ValueError("varint too long")


def to_int64(value: int) -> int:
    """Reinterpret an unsigned varint payload as a signed 64-bit integer."""
    value &= _U64_MASK
    return value - (1 << 64) if value >= (1 << 63) else value


def tag(field_number: int, wire_type: int) -> bytes:
    if field_number < 1:
        raise ValueError(f"field numbers start at 1, got {field_number}")
    return encode_uvarint((field_number << 3) | wire_type)


def varint_field(field_number: int, value: int) -> bytes:
    return tag(field_number, WIRE_VARINT) + encode_varint64(value)


def bytes_field(field_number: int, payload: bytes) -> bytes:
    return tag(field_number, WIRE_LEN) + encode_uvarint(len(payload)) + payload


def string_field(field_number: int, text: str) -> bytes:
    return bytes_field(field_number, text.encode("utf-8"))


def float_field(field_number: int, value: float) -> bytes:
    return tag(field_number, WIRE_FIXED32) + struct.pack("<f", value)


def packed_varint_field(field_number: int, values: list[int]) -> bytes:
    """Packed repeated int64 (proto3 default for repeated scalars)."""
    payload = b"".join(encode_varint64(v) for v in values)
    return bytes_field(field_number, payload)


def iter_fields(buf: bytes) -> Iterator[tuple[int, int, object]]:
    """Yield (field_number, wire_type, value) triples from a message body.

    Varint fields yield the raw unsigned integer; length-delimited fields
    yield bytes; fixed32/fixed64 yield the undecoded byte quads/octets.
    """
    pos = 0
    while pos < len(buf):
        key, pos = decode_uvarint(buf, pos)
        field_number, wire_type = key >> 3, key & 0x07
        if wire_type == WIRE_VARINT:
            value, pos = decode_uvarint(buf, pos)
        elif wire_type == WIRE_LEN:
            size, pos = decode_uvarint(buf, pos)
            if pos + size > len(buf):
                raise ValueError("truncated length-delimited field")
            value = buf[pos : pos + size]
            pos += size
        elif wire_type == WIRE_FIXED32:
            if pos + 4 > len(buf):
                raise ValueError("truncated fixed32 field")
            value = buf[pos : pos + 4]
            pos += 4
        elif wire_type == WIRE_FIXED64:
            if pos + 8 > len(buf):
                raise ValueError("truncated fixed64 field")
            value = buf[pos : pos + 8]
            pos += 8
        else:
            raise ValueError(f"unsupported wire type {wire_type}")
        yield field_number, wire_type, value


def decode_fields(buf: bytes) -> dict[int, list]:
    """Group a message body by field number, preserving order per field."""
    grouped: dict[int, list] = {}
    for number, _wire, value in iter_fields(buf):
        grouped.setdefault(number, []).append(value)
    return grouped


def decode_packed_int64(value: object) -> list[int]:
    """Expand one repeated-int64 field entry (packed blob or lone varint)."""
    if isinstance(value, int):
        return [to_int64(value)]
    assert isinstance(value, bytes)
    out: list[int] = []
    pos = 0
    while pos < len(value):
        raw, pos = decode_uvarint(value, pos)
        out.append(to_int64(raw))
    return out
