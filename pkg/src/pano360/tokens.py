"""Token grids: patchify codec, 2-D rotary tables and circular padding.

Token grids are torch tensors shaped ``(..., H, W, d)``; leading dims are
batch dims.
"""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import DomainError


def to_patches(img, patch):
    """(B, Hp, Wp, C) pixels -> (B, Hp/p, Wp/p, p*p*C) raw patch vectors."""
    *lead, h, w, c = img.shape
    if h % patch or w % patch:
        raise DomainError(f"image {h}x{w} not divisible by patch {patch}")
    x = img.reshape(*lead, h // patch, patch, w // patch, patch, c)
    x = x.transpose(-4, -3) if torch.is_tensor(x) else np.swapaxes(x, -4, -3)
    return x.reshape(*lead, h // patch, w // patch, patch * patch * c)


def from_patches(tokens, patch, channels):
    *lead, hh, ww, _ = tokens.shape
    x = tokens.reshape(*lead, hh, ww, patch, patch, channels)
    x = x.transpose(-4, -3) if torch.is_tensor(x) else np.swapaxes(x, -4, -3)
    return x.reshape(*lead, hh * patch, ww * patch, channels)


class LatentCodec(nn.Module):
    """Linear stand-in for a VAE: patch flattening plus an affine projection.

    The projection is initialised with orthonormal rows and frozen, so
    :meth:`decode` (the tied transpose) inverts :meth:`encode` exactly up to
    float error. Pixels in [0, 1] are centred to [-1, 1] and multiplied by
    ``scale`` before projection.
    """

    def __init__(self, patch=4, channels=3, dim=64, seed=0, scale=1.0):
        super().__init__()
        k = patch * patch * channels
        if dim < k:
            raise DomainError(f"latent dim {dim} smaller than patch vector size {k}")
        self.patch, self.channels, self.dim, self.scale = patch, channels, dim, scale
        gen = torch.Generator().manual_seed(seed)
        q, _ = torch.linalg.qr(torch.randn(dim, k, generator=gen, dtype=torch.float64))
        basis = q.T.contiguous()  # (k, dim), orthonormal rows
        self.register_buffer("weight", (2.0 * scale * basis).float())
        self.register_buffer("bias", (-scale * basis.sum(0)).float())

    def encode(self, img):
        """Pixels (..., H, W, C) -> token grid (..., H/p, W/p, dim)."""
        img = torch.as_tensor(img, dtype=torch.float32)
        return to_patches(img, self.patch) @ self.weight + self.bias

    def decode(self, tokens):
        patches = (tokens - self.bias) @ self.weight.T / (4.0 * self.scale ** 2)
        return from_patches(patches, self.patch, self.channels)


def patchify(img, patch, codec=None):
    """ERP image (H, W, C) -> token grid (H/patch, W/patch, d)."""
    img = torch.as_tensor(np.asarray(img), dtype=torch.float32)
    if img.shape[-2] % patch or img.shape[-3] % patch:
        raise DomainError(f"image {tuple(img.shape[-3:-1])} not divisible by patch {patch}")
    codec = codec or LatentCodec(patch, img.shape[-1])
    return codec.encode(img)


def unpatchify(tokens, patch, codec=None, channels=3):
    codec = codec or LatentCodec(patch, channels, tokens.shape[-1])
    return codec.decode(tokens)


# --------------------------------------------------------------------------
# rotary positions


@dataclass(frozen=True)
class RopeTable:
    """Axis-factorised 2-D rotary frequencies for one attention head.

    The first ``row_dim`` channels of a head rotate with the row index, the
    next ``col_dim`` with the column index; remaining channels are left
    untouched (zero frequency). ``positions`` holds the ``(row, col)`` index
    of each token of an ``H x W`` grid.
    """

    height: int
    width: int
    head_dim: int
    row_freqs: torch.Tensor
    col_freqs: torch.Tensor
    positions: torch.Tensor

    @property
    def rotary_dim(self):
        return 2 * (len(self.row_freqs) + len(self.col_freqs))

    def angles(self, positions=None):
        """Rotation angle per channel pair, ``(N, head_dim // 2)``."""
        pos = self.positions if positions is None else positions
        pos = pos.reshape(-1, 2).to(torch.float64)
        ang = torch.zeros(pos.shape[0], self.head_dim // 2, dtype=torch.float64)
        nr = len(self.row_freqs)
        ang[:, :nr] = pos[:, :1] * self.row_freqs
        ang[:, nr:nr + len(self.col_freqs)] = pos[:, 1:] * self.col_freqs
        return ang

    def cos_sin(self, positions=None):
        ang = self.angles(positions)
        return torch.cos(ang).float(), torch.sin(ang).float()


def _axis_freqs(n, base):
    return base ** (-torch.arange(0, n, 2, dtype=torch.float64) / n)


def rope_table(height, width, dim, heads, rotary_dim=None, base=10000.0):
    if dim % heads:
        raise DomainError(f"dim {dim} not divisible by heads {heads}")
    head_dim = dim // heads
    rotary_dim = head_dim if rotary_dim is None else rotary_dim
    if rotary_dim % 4 or head_dim % 2 or rotary_dim > head_dim:
        raise DomainError(f"rotary dim {rotary_dim} must be a multiple of 4 and <= head dim {head_dim}")
    half = rotary_dim // 2
    rows, cols = torch.meshgrid(torch.arange(height), torch.arange(width), indexing="ij")
    return RopeTable(height, width, head_dim, _axis_freqs(half, base), _axis_freqs(half, base),
                     torch.stack([rows, cols], -1))


def apply_rope(x, cos, sin):
    """Rotate channel pairs ``(2i, 2i+1)`` of ``x`` (..., N, head_dim)."""
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


# --------------------------------------------------------------------------
# circular padding


@dataclass
class PaddedTokenGrid:
    """Grid widened to ``W + 2`` columns; columns 0 and ``W + 1`` are copies."""

    data: torch.Tensor
    positions: torch.Tensor
    source_cols: tuple


def pad_positions(positions, mode="copy"):
    """Positional indices for the padded columns.

    ``copy`` reuses the source columns' indices (``W-1`` and ``0``);
    ``extend`` assigns fresh out-of-range indices ``-1`` and ``W``.
    """
    w = positions.shape[1]
    left, right = positions[:, -1:].clone(), positions[:, :1].clone()
    if mode == "extend":
        left[..., 1] = -1
        right[..., 1] = w
    elif mode != "copy":
        raise DomainError(f"unknown padding position mode {mode!r}")
    return torch.cat([left, positions, right], dim=1)


def circular_pad(tokens, table=None, mode="copy"):
    """``[X_last, X, X_first]`` along the width axis, positions alongside."""
    w = tokens.shape[-2]
    if w < 2:
        raise DomainError(f"circular padding needs at least 2 columns, got {w}")
    data = torch.cat([tokens[..., -1:, :], tokens, tokens[..., :1, :]], dim=-2)
    if table is None:
        h = tokens.shape[-3]
        rows, cols = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
        positions = torch.stack([rows, cols], -1)
    else:
        positions = table.positions
    return PaddedTokenGrid(data, pad_positions(positions, mode), (w - 1, 0))


def crop_pad(padded):
    data = padded.data if isinstance(padded, PaddedTokenGrid) else padded
    return data[..., 1:-1, :]


def rotate_tokens(tokens, shift):
    """Quantized yaw on a token grid: circular shift of ``shift`` columns."""
    return torch.roll(tokens, shifts=int(shift), dims=-2)


def downsample_mask(mask, patch):
    """Pixel mask -> token mask; a token is kept iff >= 50% of its pixels are."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape[-2:]
    if h % patch or w % patch:
        raise DomainError(f"mask {h}x{w} not divisible by patch {patch}")
    m = mask.reshape(*mask.shape[:-2], h // patch, patch, w // patch, patch).mean(axis=(-3, -1))
    return (m >= 0.5).astype(np.uint8)
