"""Portable float map (PFM) reading and writing.

Only little-endian colour files are produced and accepted: the header is
``PF\\n<width> <height>\\n-1.0\\n`` followed by 32-bit floats, RGB
interleaved, scanlines from the bottom row to the top.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .transport import Image


class PFMError(ValueError):
    pass


def encode_pfm(image) -> bytes:
    data = np.asarray(getattr(image, "data", image))
    if data.ndim != 3 or data.shape[2] != 3:
        raise PFMError(f"expected (height, width, 3) data, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise PFMError("PFM data must be finite")
    height, width = data.shape[:2]
    header = f"PF\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    return header + payload


def _read_token_line(buf, pos):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise PFMError("truncated PFM header")
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def decode_pfm(buf: bytes) -> Image:
    ident, pos = _read_token_line(buf, 0)
    if ident != "PF":
        raise PFMError(f"unsupported PFM identifier {ident!r} (only colour 'PF' is supported)")
    dims, pos = _read_token_line(buf, pos)
    try:
        width, height = (int(t) for t in dims.split())
    except ValueError:
        raise PFMError(f"malformed PFM dimensions line {dims!r}") from None
    if width < 1 or height < 1:
        raise PFMError(f"invalid PFM dimensions {width}x{height}")
    scale_line, pos = _read_token_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise PFMError(f"malformed PFM scale line {scale_line!r}") from None
    if scale >= 0:
        raise PFMError("big-endian PFM (positive scale) is unsupported")
    count = width * height * 3
    payload = buf[pos:]
    if len(payload) < 4 * count:
        raise PFMError(f"truncated PFM payload: {len(payload)} of {4 * count} bytes")
    if len(payload) > 4 * count:
        raise PFMError("trailing bytes after PFM payload")
    data = np.frombuffer(payload, dtype="<f4", count=count).reshape(height, width, 3)[::-1]
    return Image(np.array(data, dtype=np.float32))


def write_pfm(image, path):
    """Write atomically: the file appears complete or not at all."""
    blob = encode_pfm(image)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".pfm-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_pfm(path) -> Image:
    with open(path, "rb") as fh:
        return decode_pfm(fh.read())
