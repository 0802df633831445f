"""Grayscale PGM/PNG reading and writing, plus the binary flow-field format."""

from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import as_field, as_image


class ImageFormatError(ValueError):
    pass


FLO_MAGIC = b"PIEH"

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _read_pgm(raw: bytes) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    pos = 2
    header = []
    for _ in range(3):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ImageFormatError("corrupt PGM header")
        header.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(t) for t in header)
    except ValueError as exc:
        raise ImageFormatError(f"corrupt PGM header: {header!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"corrupt PGM header: {width}x{height} maxval={maxval}")
    count = width * height
    if magic == b"P5":
        body = raw[pos + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(body) < count * dtype.itemsize:
            raise ImageFormatError("truncated PGM pixel data")
        data = np.frombuffer(body, dtype=dtype, count=count)
    else:
        try:
            data = np.array(raw[pos:].split()[:count], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError("corrupt ASCII PGM pixel data") from exc
        if data.size < count:
            raise ImageFormatError("truncated PGM pixel data")
    return data.reshape(height, width).astype(np.float64) / maxval


def load_image(path) -> np.ndarray:
    """Read an 8/16-bit grayscale PGM or PNG into [0, 1] floats."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if raw[:1] == b"P":
        return _read_pgm(raw)
    try:
        im = Image.open(path)
        im.load()
    except Exception as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    if im.mode == "L":
        return np.asarray(im, dtype=np.float64) / 255.0
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.float64)
        return arr / 65535.0
    raise ImageFormatError(f"{path}: only grayscale images are supported (mode {im.mode})")


def _quantize(img: np.ndarray, maxval: int) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * maxval)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_image(img, path, bit_depth: int = 8) -> None:
    """Clamp to [0, 1], quantize and write PGM or PNG (chosen by extension)."""
    img = as_image(img)
    path = Path(path)
    ext = path.suffix.lower()
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    maxval = 255 if bit_depth == 8 else 65535
    q = _quantize(img, maxval)
    if ext == ".pgm":
        dtype = "u1" if bit_depth == 8 else ">u2"
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
        _atomic_write(path, header + q.astype(dtype).tobytes())
    elif ext == ".png":
        if bit_depth == 8:
            im = Image.fromarray(q.astype(np.uint8), mode="L")
        else:
            im = Image.fromarray(q.astype(np.uint16))
        tmp = path.with_name(f".{path.name}.tmp.png")
        im.save(tmp, format="PNG")
        os.replace(tmp, path)
    else:
        raise ImageFormatError(f"unknown image extension {ext!r} (use .pgm or .png)")


def save_kernel(kernel, path) -> None:
    """Store a kernel as a 16-bit PGM scaled by its peak; :func:`load_kernel` renormalizes."""
    k = as_image(kernel)
    peak = k.max()
    save_image(k / peak if peak > 0 else k, path, bit_depth=16)


def load_kernel(path) -> np.ndarray:
    k = load_image(path)
    s = k.sum()
    if s <= 0:
        raise ImageFormatError(f"{path}: kernel has no positive weight")
    return k / s


def write_flow(field, path) -> None:
    """Write a displacement field: magic, int32 width, int32 height, then LE float32 (u, v) pairs."""
    f = as_field(field)
    h, w = f.shape[1:]
    body = np.stack([f[0], f[1]], axis=-1).astype("<f4").tobytes()
    _atomic_write(Path(path), FLO_MAGIC + struct.pack("<ii", w, h) + body)


def read_flow(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FLO_MAGIC or len(raw) < 12:
        raise ImageFormatError(f"{path}: not a flow file")
    w, h = struct.unpack("<ii", raw[4:12])
    if w < 1 or h < 1 or len(raw) != 12 + 8 * w * h:
        raise ImageFormatError(f"{path}: corrupt flow header or size")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return np.stack([data[..., 0], data[..., 1]]).astype(np.float64)
