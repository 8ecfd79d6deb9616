"""MD5 file signatures (RFC 1321), implemented in pure Python."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable

_MASK32 = 0xFFFFFFFF

_SINE = tuple(int(abs(math.sin(i + 1)) * 2**32) & _MASK32 for i in range(64))
_SHIFTS = (
    (7, 12, 17, 22) * 4
    + (5, 9, 14, 20) * 4
    + (4, 11, 16, 23) * 4
    + (6, 10, 15, 21) * 4
)
_WORD_INDEX = tuple(
    i if i < 16 else (5 * i + 1) % 16 if i < 32 else (3 * i + 5) % 16 if i < 48 else (7 * i) % 16
    for i in range(64)
)
_INIT = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476)


def _rotl(x: int, c: int) -> int:
    return ((x << c) | (x >> (32 - c))) & _MASK32


def _compress(state: tuple[int, int, int, int], block: bytes) -> tuple[int, int, int, int]:
    words = struct.unpack("<16I", block)
    a, b, c, d = state
    for i in range(64):
        if i < 16:
            f = (b & c) | (~b & d)
        elif i < 32:
            f = (d & b) | (~d & c)
        elif i < 48:
            f = b ^ c ^ d
        else:
            f = c ^ (b | (~d & _MASK32))
        f = (f + a + _SINE[i] + words[_WORD_INDEX[i]]) & _MASK32
        a, d, c = d, c, b
        b = (b + _rotl(f, _SHIFTS[i])) & _MASK32
    return (
        (state[0] + a) & _MASK32,
        (state[1] + b) & _MASK32,
        (state[2] + c) & _MASK32,
        (state[3] + d) & _MASK32,
    )


@dataclass(frozen=True)
class Digest:
    """A 16-byte MD5 value. ``hex`` is its canonical lowercase rendering."""

    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != 16:
            raise ValueError(f"MD5 digest must be 16 bytes, got {len(self.raw)}")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        if len(text) != 32 or any(ch not in "0123456789abcdef" for ch in text):
            raise ValueError(f"not a lowercase 32-char MD5 hex string: {text!r}")
        return cls(bytes.fromhex(text))

    def __bytes__(self) -> bytes:
        return self.raw

    def __str__(self) -> str:
        return self.hex


class Md5:
    """Incremental MD5 hasher. Single owner; not safe to share between threads."""

    def __init__(self, data: bytes = b"") -> None:
        self._state = _INIT
        self._buffer = b""
        self._length = 0
        if data:
            self.update(data)

    def update(self, data: bytes) -> None:
        self._length += len(data)
        buf = self._buffer + bytes(data)
        full = len(buf) - len(buf) % 64
        state = self._state
        for off in range(0, full, 64):
            state = _compress(state, buf[off:off + 64])
        self._state = state
        self._buffer = buf[full:]

    def digest(self) -> Digest:
        tail = self._buffer + b"\x80"
        tail += b"\x00" * ((56 - len(tail)) % 64)
        tail += struct.pack("<Q", (self._length * 8) & 0xFFFFFFFFFFFFFFFF)
        state = self._state
        for off in range(0, len(tail), 64):
            state = _compress(state, tail[off:off + 64])
        return Digest(struct.pack("<4I", *state))

    def hexdigest(self) -> str:
        return self.digest().hex


def digest_bytes(data: bytes) -> Digest:
    return Md5(data).digest()


def digest_stream(chunks: Iterable[bytes]) -> Digest:
    """Hash a sequence of chunks; equal to ``digest_bytes`` of their concatenation."""
    hasher = Md5()
    for chunk in chunks:
        hasher.update(chunk)
    return hasher.digest()
