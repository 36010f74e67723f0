"""Binary PGM (P5) codec, the package's sole image format.

Only 8-bit grayscale is supported (maxval <= 255).  Saving applies the
documented clamp-and-round rule: values are clipped to [0, 255] and
rounded to nearest (ties to even, numpy's rint).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DecodeError, ShapeError

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _next_token(data: bytes, pos: int, label: str) -> tuple[bytes, int]:
    while True:
        while pos < len(data) and data[pos:pos + 1] in _WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        break
    if pos >= len(data):
        raise DecodeError(f"truncated header in {label}", offset=pos)
    start = pos
    while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE:
        pos += 1
    return data[start:pos], pos


def parse_pgm(data: bytes, label: str = "pgm data") -> np.ndarray:
    magic = data[:2]
    if magic != b"P5":
        if magic == b"P2":
            raise DecodeError(f"ASCII (P2) PGM is not supported in {label}", offset=0)
        raise DecodeError(f"bad magic {magic!r} in {label}, expected b'P5'", offset=0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(data, pos, label)
        try:
            value = int(token)
        except ValueError:
            raise DecodeError(f"non-numeric {name} {token!r} in {label}", offset=pos)
        if value <= 0:
            raise DecodeError(f"non-positive {name} {value} in {label}", offset=pos)
        fields.append(value)
    width, height, maxval = fields
    if maxval > 255:
        raise DecodeError(f"maxval {maxval} > 255 unsupported in {label}", offset=pos)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise DecodeError(f"missing whitespace after maxval in {label}", offset=pos)
    pos += 1
    expected = width * height
    payload = data[pos:]
    if len(payload) < expected:
        raise DecodeError(
            f"truncated payload in {label}: wanted {expected} bytes, have {len(payload)}",
            offset=pos + len(payload),
        )
    if len(payload) > expected:
        raise DecodeError(f"{len(payload) - expected} trailing bytes in {label}",
                          offset=pos + expected)
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(height, width)


def load_pgm(path) -> np.ndarray:
    """Decode a binary PGM into a (height, width) float64 grid of u8 values."""
    path = Path(path)
    return parse_pgm(path.read_bytes(), label=str(path))


def pgm_bytes(values) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"PGM wants a 2-D image, got shape {arr.shape}")
    clamped = np.rint(np.clip(arr, 0.0, 255.0)).astype(np.uint8)
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + clamped.tobytes()


def save_pgm(values, path) -> None:
    """Write an image with the clamp-and-round rule (clip to [0,255], rint)."""
    Path(path).write_bytes(pgm_bytes(values))
