"""Uncompressed image I/O: binary PPM/PGM plus PNG via Pillow."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidParameterError, ParseError


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round halves up, the display convention."""
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def write_pnm(image: np.ndarray, path=None) -> bytes:
    """Serialize as binary P5 (1 channel) or P6 (3 channels)."""
    data = to_uint8(image) if image.dtype != np.uint8 else image
    if data.ndim == 2:
        magic = b"P5"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"P6"
    else:
        raise InvalidParameterError(f"cannot write shape {image.shape} as PNM")
    h, w = data.shape[:2]
    payload = magic + f"\n{w} {h}\n255\n".encode() + data.tobytes()
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


def read_pnm(data: bytes) -> np.ndarray:
    if data[:2] not in (b"P5", b"P6"):
        raise ParseError(f"not a binary PNM file (magic {data[:2]!r})", offset=0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ParseError(f"only 8-bit PNM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    expected = w * h * channels
    raster = data[pos:pos + expected]
    if len(raster) < expected:
        raise ParseError("truncated PNM raster", offset=pos + len(raster))
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels)
    return arr[:, :, 0] if channels == 1 else arr


def write_png(image: np.ndarray, path=None) -> bytes:
    data = to_uint8(image) if image.dtype != np.uint8 else image
    mode = "L" if data.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(data, mode=mode).save(buf, format="PNG")
    payload = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


def load_image_bytes(data: bytes) -> np.ndarray:
    """Decode PNG/PPM/PGM (or anything Pillow understands) to a uint8 array."""
    if data[:2] in (b"P5", b"P6"):
        return read_pnm(data)
    img = Image.open(io.BytesIO(data))
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB" if img.mode not in ("1", "I;16", "I") else "L")
    return np.asarray(img)


def load_image(path) -> np.ndarray:
    return load_image_bytes(Path(path).read_bytes())


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        write_pnm(image, path)
    elif suffix == ".png":
        write_png(image, path)
    else:
        raise InvalidParameterError(f"unsupported output format {suffix!r} (use .png/.ppm/.pgm)")
