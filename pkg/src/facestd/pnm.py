"""Binary PPM (P6, 8-bit) and PGM (P5, 16-bit) writers and a Netpbm reader."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMFormatError(ValueError):
    pass


def quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    v = np.clip(np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.0, posinf=1.0), 0.0, 1.0)
    return np.rint(v * maxval).astype(np.int64)


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("RGB image must be H x W x 3")
    h, w, _ = rgb.shape
    payload = quantize(rgb, 255).astype(np.uint8).tobytes()
    return b"P6\n%d %d\n255\n" % (w, h) + payload


def encode_pgm16(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError("grey image must be H x W")
    h, w = gray.shape
    payload = quantize(gray, 65535).astype(">u2").tobytes()
    return b"P5\n%d %d\n65535\n" % (w, h) + payload


def write_image(img: np.ndarray, path, kind: str = "rgb8") -> None:
    """Write ``img`` (values in [0, 1]) as ``rgb8`` PPM or ``depth16`` PGM."""
    if kind == "rgb8":
        data = encode_ppm(img)
    elif kind == "depth16":
        data = encode_pgm16(img)
    else:
        raise ValueError(f"unknown image kind {kind!r}")
    Path(path).write_bytes(data)


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens (skipping comments)."""
    out = []
    pos = 0
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMFormatError("truncated header")
        out.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PNMFormatError("missing whitespace after header")
    return out, pos + 1


def decode(data: bytes) -> np.ndarray:
    """Decode a binary P5/P6 image into floats in [0, 1] (H x W or H x W x 3)."""
    if data[:2] not in (b"P5", b"P6"):
        raise PNMFormatError(f"unsupported magic {data[:2]!r}")
    (magic, w, h, maxval), off = _tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PNMFormatError("non-integer header field") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise PNMFormatError("invalid header values")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    if len(data) - off < count * dtype.itemsize:
        raise PNMFormatError("truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=off).astype(np.float64)
    img = raw / maxval
    return img.reshape(h, w, 3) if channels == 3 else img.reshape(h, w)


def read_image(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
