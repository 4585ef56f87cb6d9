"""Minimal deterministic PNG encoder (stdlib only).

Used by the stub evaluator to emit small valid image payloads without an
imaging dependency. Output bytes depend only on the pixel content.
"""

from __future__ import annotations

import struct
import zlib


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_rgb(pixels: list[list[tuple[int, int, int]]]) -> bytes:
    """Encode a row-major RGB pixel grid as a PNG byte string."""
    height = len(pixels)
    width = len(pixels[0])
    raw = bytearray()
    for row in pixels:
        raw.append(0)  # no per-row filter
        for r, g, b in row:
            raw.extend((r & 0xFF, g & 0xFF, b & 0xFF))
    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    compressed = zlib.compress(bytes(raw), 9)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", header)
        + _chunk(b"IDAT", compressed)
        + _chunk(b"IEND", b"")
    )


def solid_tile(width: int, height: int, rgb: tuple[int, int, int]) -> bytes:
    return encode_rgb([[rgb] * width for _ in range(height)])
