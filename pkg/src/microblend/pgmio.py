"""Minimal PGM (P2/P5) image reader and writer.

Used for basis ingestion (grayscale value >= 128 counts as solid) and for
exporting structure images without pulling in an imaging dependency.
"""

from __future__ import annotations

import numpy as np


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit PGM file (P2 ascii or P5 binary) as a uint8 array."""
    with open(path, "rb") as f:
        data = f.read()

    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    magic = tokens[0]
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    if magic == b"P5":
        i += 1  # single whitespace after maxval
        raster = np.frombuffer(data[i:i + width * height], dtype=np.uint8)
        if raster.size != width * height:
            raise ValueError(f"{path}: truncated raster")
    elif magic == b"P2":
        raster = np.array(data[i:].split(), dtype=np.uint8)
        if raster.size != width * height:
            raise ValueError(f"{path}: expected {width * height} samples, "
                             f"got {raster.size}")
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    return raster.reshape(height, width)


def write_pgm(path, img) -> None:
    """Write a 2D array as binary PGM; floats in [0, 1] are scaled to 0..255."""
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    elif np.issubdtype(img.dtype, np.floating):
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    else:
        img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def solid_mask_from_pgm(path) -> np.ndarray:
    """Basis ingestion rule: grayscale >= 128 is solid."""
    return read_pgm(path) >= 128
