"""Zero-dependency binary PPM (P6) / PGM (P5) image I/O.

RGB images are 8-bit P6; label masks are 8-bit P5 where the pixel value is
the class id and 255 means ignore.
"""

from __future__ import annotations

import numpy as np


def _read_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    return width, height, pos


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write float RGB in [0, 1] (H, W, 3) as binary P6."""
    q = quantize(rgb)
    h, w, _ = q.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 into float RGB in [0, 1] (H, W, 3)."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P6")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return body.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a class-id mask (H, W) as binary P5."""
    m = np.asarray(mask)
    if m.dtype != np.uint8:
        if m.min() < 0 or m.max() > 255:
            raise ValueError("mask values must fit in uint8")
        m = m.astype(np.uint8)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(m.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 into a uint8 mask (H, W)."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P5")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return body.reshape(h, w).copy()


def quantize(rgb: np.ndarray) -> np.ndarray:
    """Float [0, 1] -> uint8 with round-half-away behavior of np.rint."""
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
