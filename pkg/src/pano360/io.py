"""PNG images and raw float32 grid dumps.

Float dumps are a 16-byte header (``b"P36F"`` magic, then width, height,
channels as little-endian uint32) followed by planar (channel-major)
little-endian float32 data.
"""
from pathlib import Path
import struct

import numpy as np
from PIL import Image

from .errors import FormatError

DUMP_MAGIC = b"P36F"
_HEADER = struct.Struct("<4sIII")


def read_png(path):
    """8-bit PNG -> float64 (H, W, 3) in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask_png(path):
    """Grayscale PNG -> binary mask (nonzero = 1)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such mask: {path}")
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 0).astype(np.uint8)


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def write_mask_png(path, mask):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) != 0).astype(np.uint8) * 255).save(path, format="PNG")


def write_dump(path, grid):
    grid = np.asarray(grid, dtype="<f4")
    if grid.ndim == 2:
        grid = grid[..., None]
    h, w, c = grid.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DUMP_MAGIC, w, h, c))
        f.write(np.ascontiguousarray(np.moveaxis(grid, -1, 0)).tobytes())


def read_dump(path):
    """Inverse of :func:`write_dump`; returns float32 (H, W, C)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, w, h, c = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = w * h * c
    if len(raw) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: payload size does not match {w}x{h}x{c} header")
    planes = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(c, h, w)
    return np.moveaxis(planes, 0, -1).astype(np.float32)
