"""Canonical binary encoding for protocol values.

Every value that crosses a process boundary (or gets hashed/signed) is
encoded through `encode`. The encoding is injective (up to hash collisions)
and deterministic: length-prefixed, type-tagged, fields in declaration
order, sets sorted by their encoded bytes. Nested protocol objects encode
as their 32-byte digests, so certificate chains stay cheap to hash no
matter how deep they nest; two values are protocol-equal iff their digests
are equal, and `Wire` types adopt exactly that as their equality.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from typing import Any

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

U64_MAX = 2**64 - 1


class EncodingError(ValueError):
    pass


class Wire:
    """Base for protocol dataclasses: digest-based equality and hashing.

    Subclasses are frozen dataclasses declared with eq=False so these
    definitions survive; the digest is cached on first use.
    """

    def digest(self) -> bytes:
        cached = self.__dict__.get("_dig")
        if cached is None:
            cached = hashlib.sha256(encode(self)).digest()
            object.__setattr__(self, "_dig", cached)
        return cached

    def __eq__(self, other: Any) -> bool:
        if self is other:
            return True
        if other.__class__ is not self.__class__:
            return NotImplemented if not isinstance(other, Wire) else False
        return self.digest() == other.digest()

    def __ne__(self, other: Any) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq

    def __hash__(self) -> int:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = int.from_bytes(self.digest()[:8], "big")
            object.__setattr__(self, "_hash", cached)
        return cached


def _ref(value: Any) -> bytes:
    """Reference encoding used for values nested inside composites."""
    if isinstance(value, Wire):
        return b"D" + value.digest()
    t = type(value)
    if t is tuple:
        parts = [_ref(v) for v in value]
        return b"T" + _U32.pack(len(parts)) + b"".join(parts)
    if t is frozenset:
        parts = sorted(_ref(v) for v in value)
        return b"F" + _U32.pack(len(parts)) + b"".join(parts)
    return encode(value)


def encode(value: Any) -> bytes:
    """Encode a protocol value into canonical bytes (one node deep)."""
    cached = getattr(value, "_enc_cache", None)
    if cached is not None:
        return cached
    if value is None:
        return b"N"
    t = type(value)
    if t is bool:
        return b"B\x01" if value else b"B\x00"
    if t is int:
        if not 0 <= value <= U64_MAX:
            raise EncodingError(f"integer out of u64 range: {value}")
        return b"I" + _U64.pack(value)
    if t is bytes:
        return b"Y" + _U32.pack(len(value)) + value
    if t is str:
        raw = value.encode("utf-8")
        return b"S" + _U32.pack(len(raw)) + raw
    if t is tuple:
        parts = [_ref(v) for v in value]
        return b"T" + _U32.pack(len(parts)) + b"".join(parts)
    if t is frozenset:
        parts = sorted(_ref(v) for v in value)
        return b"F" + _U32.pack(len(parts)) + b"".join(parts)
    tag = getattr(value, "WIRE", None)
    if tag is not None:
        parts = [encode(tag)]
        for f in dataclasses.fields(value):
            parts.append(_ref(getattr(value, f.name)))
        out = b"O" + _U32.pack(len(parts)) + b"".join(parts)
        try:
            object.__setattr__(value, "_enc_cache", out)
        except AttributeError:
            pass
        return out
    raise EncodingError(f"cannot encode value of type {t.__name__}")


def digest(value: Any) -> bytes:
    """32-byte canonical digest of a protocol value."""
    if isinstance(value, Wire):
        return value.digest()
    return hashlib.sha256(encode(value)).digest()


def short_hex(raw: bytes, n: int = 16) -> str:
    """First `n` bytes of a digest as hex, for trace records."""
    return raw[:n].hex()


def sort_key(value: Any) -> bytes:
    """Canonical byte order used for deterministic tie-breaking."""
    return _ref(value)
