"""Binary portable graymap (P5) reading/writing and frame-directory ingestion.

Frame directories hold files named ``frame_%06d.pgm`` with indices
contiguous from 0; iteration stops at the first missing index.
"""
from __future__ import annotations

import os
from typing import Iterator

import numpy as np

from .core import Frame


class PgmFormatError(ValueError):
    """Malformed P5 graymap stream."""


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PgmFormatError("unexpected end of header")
    return data[start:pos], pos


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 graymap into a (height, width) uint8 array."""
    if data[:2] != b"P5":
        raise PgmFormatError("not a binary graymap (missing P5 magic)")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise PgmFormatError(f"non-numeric header field {tok!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PgmFormatError(f"invalid dimensions {width}x{height}")
    if not (0 < maxval < 256):
        raise PgmFormatError(f"unsupported maxval {maxval} (8-bit only)")
    pos += 1  # exactly one whitespace byte separates header and raster
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise PgmFormatError(f"truncated raster: expected {width * height} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 array")
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def write_pgm(path, pixels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(pixels))


def frame_filename(index: int) -> str:
    return "frame_%06d.pgm" % index


def iter_frames(directory) -> Iterator[Frame]:
    """Yield Frames from a directory of frame_%06d.pgm files, starting at 0."""
    index = 0
    while True:
        path = os.path.join(directory, frame_filename(index))
        if not os.path.isfile(path):
            if index == 0:
                raise FileNotFoundError(f"no {frame_filename(0)} in {directory}")
            return
        yield Frame(index, read_pgm(path))
        index += 1
