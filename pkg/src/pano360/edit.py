"""Training-free inpainting and outpainting by inversion and token replacement."""
from dataclasses import dataclass
import math

import numpy as np
import torch

from .errors import DomainError
from .geometry import check_mask
from .model import Condition, decode_image, initial_noise, invert_latent, sample_latent
from .tokens import downsample_mask


@dataclass
class EditRequest:
    source: np.ndarray  # ERP image (H, W, C)
    mask: np.ndarray  # pixel mask, 1 = keep, 0 = regenerate
    c: Condition
    replace_until: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.replace_until <= 1.0:
            raise DomainError(f"replace_until must be in [0, 1], got {self.replace_until}")
        check_mask(self.mask)
        if np.asarray(self.mask).shape != np.asarray(self.source).shape[:2]:
            raise DomainError("mask does not match source image")


def token_replace_step(current, reference, token_mask):
    """``M * reference + (1 - M) * current``; positions are untouched."""
    if current.shape != reference.shape:
        raise DomainError(f"shape mismatch {tuple(current.shape)} vs {tuple(reference.shape)}")
    m = torch.as_tensor(np.asarray(token_mask) if not torch.is_tensor(token_mask) else token_mask)
    if tuple(m.shape[-2:]) != tuple(current.shape[-3:-1]):
        raise DomainError("token mask does not match grid")
    keep = (m != 0)[..., None]
    return torch.where(keep, reference, current)


def replacement_steps(steps, replace_until):
    return math.ceil(replace_until * steps)


def inpaint(model, codec, req, steps=28, g=1.0, seed=0, return_latent=False):
    """Regenerate the ``mask == 0`` region of ``req.source``.

    The source is inverted to a trajectory; for the first
    ``ceil(replace_until * steps)`` sampling steps the kept tokens are
    overwritten with the trajectory state at the matching time.
    """
    x0 = codec.encode(torch.as_tensor(req.source)[None])
    traj = invert_latent(model, x0, req.c, steps, trajectory=True)
    token_mask = torch.from_numpy(downsample_mask(req.mask, model.config.patch))
    n_replace = replacement_steps(steps, req.replace_until)

    def anchor(i, t, x):
        if i < n_replace:
            # sampling step i starts at grid time 1 - i/steps = traj[steps - i]
            return token_replace_step(x, traj[steps - i], token_mask)
        return x

    cfg = model.config
    noise = initial_noise((1,) + cfg.token_shape + (cfg.latent_dim,), seed)
    x = sample_latent(model, req.c, steps, g, noise=noise, callback=anchor)
    if return_latent:
        return x
    return decode_image(codec, x)[0]


def outpaint(model, codec, partial, footprint, c, steps=28, g=1.0, seed=0, replace_until=0.4):
    """Complete a panorama from content known only on ``footprint``."""
    req = EditRequest(np.asarray(partial, dtype=np.float64), footprint, c, replace_until)
    return inpaint(model, codec, req, steps, g, seed)
