"""Binary checkpoint container, PGM image grids, and CSV helpers.

Container layout (all integers u32 little-endian)::

    b"RAE1"
    meta_len, meta bytes            UTF-8 "key=value" lines, sorted by key
    n_tensors
    per tensor: name_len, name, rank, dims..., f32 LE payload (row-major)
    crc32 of every preceding byte
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CorruptFileError",
    "Container",
    "dump_container",
    "load_container",
    "save_container",
    "read_container",
    "image_grid",
    "write_pgm",
    "read_pgm",
    "write_csv",
]

MAGIC = b"RAE1"
FORMAT_VERSION = "1"


class CorruptFileError(IOError):
    """Bad magic, truncated data, or checksum mismatch."""


@dataclass
class Container:
    meta: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _u32(v: int) -> bytes:
    return struct.pack("<I", v)


def dump_container(c: Container) -> bytes:
    meta = "".join(f"{k}={c.meta[k]}\n" for k in sorted(c.meta))
    for k, v in c.meta.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise ValueError(f"metadata entry {k!r} cannot be encoded")
    parts = [MAGIC, _u32(len(meta.encode())), meta.encode(), _u32(len(c.tensors))]
    for name, arr in c.tensors.items():
        arr = np.asarray(arr)
        nb = name.encode()
        parts += [_u32(len(nb)), nb, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


def load_container(buf: bytes) -> Container:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CorruptFileError("not an RAE1 container")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFileError("checksum mismatch")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CorruptFileError("truncated container")
        out = body[pos:pos + n]
        pos += n
        return out

    def u32():
        return struct.unpack("<I", take(4))[0]

    meta = {}
    for line in take(u32()).decode().splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    tensors = {}
    for _ in range(u32()):
        name = take(u32()).decode()
        dims = tuple(u32() for _ in range(u32()))
        count = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
    if pos != len(body):
        raise CorruptFileError("trailing bytes in container")
    return Container(meta, tensors)


def save_container(path, c: Container) -> None:
    Path(path).write_bytes(dump_container(c))


def read_container(path) -> Container:
    return load_container(Path(path).read_bytes())


def image_grid(images: np.ndarray, cols: int, pad: int = 1) -> np.ndarray:
    """Tile (n, H, W) images in [0, 1] into one uint8 canvas, row-major."""
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        return np.zeros((0, 0), dtype=np.uint8)
    if images.ndim == 2:
        images = images[:, None, :]
    n, h, w = images.shape
    cols = max(1, min(cols, n))
    rows = -(-n // cols)
    canvas = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad), dtype=np.uint8)
    pix = np.round(np.clip(images, 0.0, 1.0) * 255).astype(np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y:y + h, x:x + w] = pix[i]
    return canvas


def write_pgm(path, canvas: np.ndarray) -> None:
    """Binary greyscale PGM (P5, maxval 255)."""
    canvas = np.asarray(canvas, dtype=np.uint8)
    h, w = canvas.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(canvas.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise CorruptFileError(f"{path}: not a P5/255 PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pix.reshape(h, w)


def write_csv(path, header, rows, fmt: str = "{:.6g}") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt.format(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])
