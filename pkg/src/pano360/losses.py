"""Noise-space training objectives for the panoramic and perspective branches.

All losses are computed in float64 on ``(B, H, W, d)`` token grids. Squared
errors are reduced per token column first and the column totals are summed
in sorted order, so any permutation of columns (quantized yaw) leaves the
value bit-identical.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
import torch

from .errors import DomainError
from .geometry import YawAngle, cubemap_sampling_plan
from .tokens import rotate_tokens

TARGET_MODES = ("literal", "noise")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5  # cube
    lambda2: float = 0.5  # yaw

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise DomainError("loss weights must be non-negative")


@dataclass
class LossReport:
    total: torch.Tensor
    mse: float = 0.0
    cube: float = 0.0
    yaw: float = 0.0
    perspective: float = 0.0
    branch: str = "pano"

    def as_dict(self):
        return {"total": self.total.item(), "mse": self.mse, "cube": self.cube,
                "yaw": self.yaw, "perspective": self.perspective}


@dataclass
class NoiseBundle:
    """One training example in noise space (all token grids ``(B, H, W, d)``)."""

    x0: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor
    xt: torch.Tensor
    eps_pred: torch.Tensor


def _sum_sq(diff, weight=None):
    # column-wise partial sums, then an order-free total
    sq = diff.to(torch.float64) ** 2
    if weight is not None:
        sq = sq * weight
    cols = sq.movedim(-2, 0).contiguous().reshape(sq.shape[-2], -1).sum(dim=1)
    return torch.sort(cols).values.sum()


def mse(pred, target):
    if pred.shape != target.shape:
        raise DomainError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return _sum_sq(pred - target) / pred.numel()


def _token_mask(mask, like):
    m = torch.as_tensor(np.asarray(mask) if not torch.is_tensor(mask) else mask)
    if not torch.all((m == 0) | (m == 1)):
        raise DomainError("mask values must be exactly 0 or 1")
    m = m.to(torch.float64)
    grid = like.shape[-3:-1]
    if tuple(m.shape[-2:]) != tuple(grid):
        raise DomainError(f"mask shape {tuple(m.shape)} does not match token grid {tuple(grid)}")
    return m.expand(like.shape[:-1])


def masked_mse(target, pred, mask=None):
    """Mean squared error over mask-selected tokens (all channels).

    ``mask`` is ``(H, W)`` or ``(B, H, W)`` with values in {0, 1}; ``None``
    selects everything.
    """
    if pred.shape != target.shape:
        raise DomainError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if mask is None:
        return mse(pred, target)
    m = _token_mask(mask, pred)
    count = m.sum() * pred.shape[-1]
    if count == 0:
        raise DomainError("mask selects no tokens")
    return _sum_sq(pred - target, m[..., None]) / count


def residual_target(bundle, target="literal"):
    """Target field for the yaw and cube losses.

    ``literal`` uses ``X_t - eps``; ``noise`` uses the sampled noise itself.
    """
    if target == "literal":
        return bundle.xt - bundle.eps
    if target == "noise":
        return bundle.eps
    raise DomainError(f"unknown target mode {target!r}")


def rotate_tokens_continuous(tokens, radians):
    """Yaw by a fractional number of columns, linear interpolation with wrap."""
    w = tokens.shape[-2]
    shift = (radians / (2 * math.pi) * w) % w
    k = math.floor(shift)
    frac = shift - k
    lo = torch.roll(tokens, shifts=k, dims=-2)
    if frac == 0.0:
        return lo
    return (1 - frac) * lo + frac * torch.roll(tokens, shifts=k + 1, dims=-2)


def yaw_loss(bundle, a, target="literal", continuous=False):
    """MSE between the yaw-rotated prediction and rotated target.

    Quantized angles permute columns exactly. ``continuous=True`` accepts any
    angle and resamples columns linearly; the interpolation makes the loss
    depend on the angle, which the permutation never does.
    """
    w = bundle.eps_pred.shape[-2]
    tgt = residual_target(bundle, target)
    if continuous:
        radians = a.radians if isinstance(a, YawAngle) else float(a)
        return mse(rotate_tokens_continuous(bundle.eps_pred, radians),
                   rotate_tokens_continuous(tgt, radians))
    if not isinstance(a, YawAngle):
        a = YawAngle(a, w)
    if not a.quantized:
        raise DomainError("yaw loss needs a whole-column angle unless continuous=True")
    shift = a.shift_for(w)
    return mse(rotate_tokens(bundle.eps_pred, shift), rotate_tokens(tgt, shift))


@lru_cache(maxsize=16)
def _plan(height, width, face_size):
    index, weight = cubemap_sampling_plan(height, width, face_size)
    return torch.from_numpy(index), torch.from_numpy(weight)


def cubemap_tokens(grid, face_size=None):
    """Channel-wise bilinear cube mapping of an ERP-layout token field.

    ``(..., H, W, d)`` -> ``(..., 6, S, S, d)``; differentiable.
    """
    h, w, d = grid.shape[-3:]
    if w != 2 * h:
        raise DomainError(f"token grid must be ERP-shaped (W = 2H), got {h}x{w}")
    face_size = face_size or w // 4
    index, weight = _plan(h, w, face_size)
    flat = grid.reshape(*grid.shape[:-3], h * w, d)
    gathered = flat[..., index, :]  # (..., K, 4, d)
    out = (gathered * weight.to(grid.dtype)[..., None]).sum(dim=-2)
    return out.reshape(*grid.shape[:-3], 6, face_size, face_size, d)


def cube_loss(bundle, face_size=None, target="literal"):
    tgt = residual_target(bundle, target).to(torch.float64)
    pred = bundle.eps_pred.to(torch.float64)
    diff = cubemap_tokens(pred - tgt, face_size)
    return _sum_sq(diff) / diff.numel()


def pano_loss(bundle, a, weights=LossWeights(), face_size=None, target="literal"):
    """Panoramic objective: plain noise MSE plus weighted cube and yaw terms."""
    l_mse = mse(bundle.eps_pred, bundle.eps)
    zero = torch.zeros((), dtype=torch.float64)
    l_cube = cube_loss(bundle, face_size, target) if weights.lambda1 else zero
    l_yaw = yaw_loss(bundle, a, target) if weights.lambda2 else zero
    total = l_mse + weights.lambda1 * l_cube + weights.lambda2 * l_yaw
    return LossReport(total, l_mse.item(), l_cube.item(), l_yaw.item(), 0.0, "pano")


def perspective_loss(bundle, token_mask):
    """Noise MSE restricted to the reprojected perspective footprint."""
    return masked_mse(bundle.eps, bundle.eps_pred, token_mask)


def perspective_report(bundle, token_mask):
    loss = perspective_loss(bundle, token_mask)
    return LossReport(loss, 0.0, 0.0, 0.0, loss.item(), "persp")
