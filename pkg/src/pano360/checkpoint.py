"""Checkpoint files.

Layout: ``b"PANO360CKPT"`` magic, little-endian uint32 format version,
uint32 header length, UTF-8 JSON header (model config, step, tensor
directory with name/shape/offset), then the raw little-endian float32
payload in directory order.
"""
import json
from pathlib import Path
import struct

import numpy as np
import torch

from .errors import FormatError
from .model import ModelConfig, PanoDiT

MAGIC = b"PANO360CKPT"
VERSION = 1
_PREFIX = struct.Struct("<11sII")


def save_checkpoint(path, model, step=0, extra=None):
    state = model.state_dict()
    directory, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": model.config.to_dict(), "step": step, "tensors": directory,
                         "extra": extra or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    return path


def read_checkpoint(path):
    """Parse a checkpoint into ``(header, {name: float32 array})``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupted header ({exc})") from None
    base = _PREFIX.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = base + entry["offset"]
        if start + 4 * n > len(raw):
            raise FormatError(f"{path}: payload truncated at {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, "<f4", n, start).reshape(entry["shape"])
    return header, tensors


def load_checkpoint(path, config=None):
    """Rebuild a :class:`PanoDiT` from ``path``.

    If ``config`` is given it must match the stored one.
    """
    header, tensors = read_checkpoint(path)
    stored = ModelConfig(**header["config"])
    if config is not None and config != stored:
        raise FormatError(f"{path}: checkpoint config {stored} does not match {config}")
    model = PanoDiT(stored)
    own = model.state_dict()
    if set(own) != set(tensors):
        raise FormatError(f"{path}: tensor set does not match model")
    for name, arr in tensors.items():
        if tuple(own[name].shape) != arr.shape:
            raise FormatError(f"{path}: shape mismatch for {name}: {arr.shape} vs {tuple(own[name].shape)}")
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
    model.eval()
    return model, header
