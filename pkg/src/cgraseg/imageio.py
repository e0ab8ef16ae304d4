"""Binary PPM (P6) / PGM (P5) readers and writers, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    vals, pos = [], 2
    while len(vals) < count:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        vals.append(int(blob[start:pos]))
    return vals, pos + 1  # single whitespace byte before raster


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header")
    (w, h, maxval), pos = _tokens(blob, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    n = w * h * channels
    raster = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return raster.reshape(shape).copy()


def read_ppm(path) -> np.ndarray:
    """(height, width, 3) uint8."""
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """(height, width) uint8."""
    return _read(path, b"P5", 1)


def write_ppm(path, img) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    if img.min(initial=0) < 0 or img.max(initial=0) > 255:
        raise ValueError("PGM values must fit in 8 bits")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.astype(np.uint8).tobytes())
