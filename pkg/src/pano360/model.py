"""Desk-scale diffusion transformer with rectified-flow noising.

Noising follows ``x_t = (1 - t) x0 + t eps``. The network is an
epsilon-prediction model; its head is written as
``eps_hat = x_t + (1 - t) * F(x_t, t, c)`` so the ODE velocity
``v = eps_hat - x0_hat`` (with ``x0_hat = (x_t - t eps_hat) / (1 - t)``)
reduces exactly to ``F`` and stays finite at ``t = 1``.
"""
from dataclasses import asdict, dataclass
import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import DomainError
from .tokens import LatentCodec, apply_rope, circular_pad, crop_pad, pad_positions, rope_table

CODEC_SEED = 0

T_MIN, T_MAX = 0.001, 0.999


@dataclass
class ModelConfig:
    blocks: int = 6
    heads: int = 4
    dim: int = 64
    patch: int = 4
    cond_classes: int = 5  # procedural families + the null class (last id)
    latent_dim: int = 64
    latent_scale: float = 3.0
    channels: int = 3
    height: int = 64
    width: int = 128
    circular_padding: bool = True
    pad_positions: str = "copy"
    mlp_ratio: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise DomainError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.width != 2 * self.height:
            raise DomainError("ERP width must be twice the height")
        if self.height % self.patch:
            raise DomainError(f"height {self.height} not divisible by patch {self.patch}")

    @property
    def token_shape(self):
        return self.height // self.patch, self.width // self.patch

    @property
    def null_class(self):
        return self.cond_classes - 1

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Condition:
    class_id: int
    null: bool = False

    def label(self, config):
        if not 0 <= self.class_id < config.cond_classes:
            raise DomainError(f"class id {self.class_id} outside 0..{config.cond_classes - 1}")
        return config.null_class if self.null else self.class_id


def timestep_embedding(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = (t.float() * 1000.0)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def modulate(x, shift, scale):
    return x * (1 + scale[:, None]) + shift[:, None]


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, cos, sin):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class DiTBlock(nn.Module):
    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(approximate="tanh"),
                                 nn.Linear(mlp_ratio * dim, dim))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))

    def forward(self, x, c, cos, sin):
        s1, sc1, g1, s2, sc2, g2 = self.ada(c).chunk(6, dim=-1)
        x = x + g1[:, None] * self.attn(modulate(self.norm1(x), s1, sc1), cos, sin)
        return x + g2[:, None] * self.mlp(modulate(self.norm2(x), s2, sc2))


class PanoDiT(nn.Module):
    """Token-grid diffusion transformer.

    ``forward`` returns the velocity-like residual ``F``; :meth:`eps` wraps it
    into the epsilon prediction used by the losses.
    """

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        self.config = config
        d = config.dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.in_proj = nn.Linear(config.latent_dim, d)
            self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
            self.class_embed = nn.Embedding(config.cond_classes, d)
            # latitude only: keeps the network equivariant to column shifts
            self.row_embed = nn.Parameter(torch.zeros(config.token_shape[0], d))
            self.blocks = nn.ModuleList(DiTBlock(d, config.heads, config.mlp_ratio)
                                        for _ in range(config.blocks))
            self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
            self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
            self.out = nn.Linear(d, config.latent_dim)
            self._init_weights()
        h, w = config.token_shape
        table = rope_table(h, w, d, config.heads, base=config.rope_base)
        positions = table.positions
        if config.circular_padding:
            positions = pad_positions(positions, config.pad_positions)
        cos, sin = table.cos_sin(positions)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.class_embed.weight, std=0.02)
        nn.init.normal_(self.row_embed, std=0.02)
        for blk in self.blocks:
            nn.init.zeros_(blk.ada[-1].weight)
            nn.init.zeros_(blk.ada[-1].bias)
        nn.init.zeros_(self.final_ada[-1].weight)
        nn.init.zeros_(self.final_ada[-1].bias)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def _check(self, xt):
        expect = self.config.token_shape + (self.config.latent_dim,)
        if tuple(xt.shape[-3:]) != expect:
            raise DomainError(f"token grid shape {tuple(xt.shape[-3:])} != {expect}")

    def forward(self, xt, t, labels):
        self._check(xt)
        b = xt.shape[0]
        t = torch.as_tensor(t, dtype=xt.dtype).reshape(-1).expand(b)
        labels = torch.as_tensor(labels).reshape(-1).expand(b)
        x = circular_pad(xt).data if self.config.circular_padding else xt
        h, w = x.shape[1:3]
        x = (self.in_proj(x) + self.row_embed[:, None]).reshape(b, h * w, -1)
        c = self.t_mlp(timestep_embedding(t, self.config.dim).to(x.dtype)) + self.class_embed(labels)
        cos, sin = self.rope_cos.to(x.dtype), self.rope_sin.to(x.dtype)
        for blk in self.blocks:
            x = blk(x, c, cos, sin)
        shift, scale = self.final_ada(c).chunk(2, dim=-1)
        x = self.out(modulate(self.final_norm(x), shift, scale)).reshape(b, h, w, -1)
        return crop_pad(x) if self.config.circular_padding else x

    def velocity(self, xt, t, labels):
        return self(xt, t, labels)

    def eps(self, xt, t, labels):
        t_col = torch.as_tensor(t, dtype=xt.dtype).reshape(-1, 1, 1, 1)
        return xt + (1 - t_col) * self(xt, t, labels)


def labels_for(model, c, batch=1, null=False):
    cfg = model.config
    if isinstance(c, Condition):
        c = c.label(cfg)
    c = torch.as_tensor(c, dtype=torch.long).reshape(-1).expand(batch)
    if null:
        c = torch.full_like(c, cfg.null_class)
    return c


# --------------------------------------------------------------------------
# flow utilities


def forward_noise(x0, eps, t):
    """Rectified-flow interpolation ``(1 - t) x0 + t eps``."""
    t = torch.as_tensor(t, dtype=x0.dtype)
    if torch.any((t < 0) | (t > 1)):
        raise DomainError(f"timestep outside [0, 1]: {t}")
    if x0.shape != eps.shape:
        raise DomainError(f"shape mismatch {tuple(x0.shape)} vs {tuple(eps.shape)}")
    if t.ndim:
        t = t.reshape(-1, *([1] * (x0.ndim - 1)))
    return (1 - t) * x0 + t * eps


def cfg_combine(eps_cond, eps_null, g):
    if g < 0:
        raise DomainError(f"guidance scale must be >= 0, got {g}")
    return eps_null + g * (eps_cond - eps_null)


def velocity_from_eps(xt, t, eps, delta=1e-3):
    """``eps - x0_hat`` with the ``1 - t`` denominator floored at ``delta``."""
    t = torch.as_tensor(t, dtype=xt.dtype)
    if t.ndim:
        t = t.reshape(-1, *([1] * (xt.ndim - 1)))
    x0_hat = (xt - t * eps) / torch.clamp(1 - t, min=delta)
    return eps - x0_hat


def guided_velocity(model, x, t, labels, g=1.0, null_labels=None):
    """Velocity field under classifier-free guidance.

    Models exposing ``velocity`` are used directly (guidance is linear in
    eps, hence in v); otherwise v is derived from ``model.eps``.
    """
    def v_of(lab):
        if hasattr(model, "velocity"):
            return model.velocity(x, t, lab)
        return velocity_from_eps(x, t, model.eps(x, t, lab))

    v_cond = v_of(labels)
    if g == 1.0 or null_labels is None:
        return v_cond
    return cfg_combine(v_cond, v_of(null_labels), g)


def time_grid(steps, reverse=True):
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    ts = torch.linspace(0.0, 1.0, steps + 1, dtype=torch.float64)
    return ts.flip(0) if reverse else ts


def initial_noise(shape, seed):
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=gen)


@torch.no_grad()
def sample_latent(model, c, steps=28, g=3.0, seed=0, noise=None, batch=1, callback=None):
    """Euler integration of the flow ODE from t=1 (noise) to t=0.

    ``callback(i, t, x)`` may return a replacement for ``x`` before step ``i``
    (used for token replacement during editing).
    """
    cfg = model.config
    if noise is None:
        noise = initial_noise((batch,) + cfg.token_shape + (cfg.latent_dim,), seed)
    x = noise.clone()
    labels = labels_for(model, c, x.shape[0])
    null = labels_for(model, c, x.shape[0], null=True)
    ts = time_grid(steps)
    for i in range(steps):
        t, t_next = float(ts[i]), float(ts[i + 1])
        if callback is not None:
            x = callback(i, t, x)
        v = guided_velocity(model, x, torch.full((x.shape[0],), t), labels, g, null)
        x = x + (t_next - t) * v
    return x


@torch.no_grad()
def invert_latent(model, x0, c, steps=28, g=1.0, trajectory=False):
    """Run the ODE forward from t=0 to t=1 starting at clean latents ``x0``.

    With ``trajectory=True`` returns the list of states at every grid time
    ``0, 1/steps, ..., 1``.
    """
    x = x0.clone()
    labels = labels_for(model, c, x.shape[0])
    null = labels_for(model, c, x.shape[0], null=True)
    ts = time_grid(steps, reverse=False)
    states = [x.clone()]
    for i in range(steps):
        t, t_next = float(ts[i]), float(ts[i + 1])
        v = guided_velocity(model, x, torch.full((x.shape[0],), t), labels, g, null)
        x = x + (t_next - t) * v
        states.append(x.clone())
    return states if trajectory else x


def decode_image(codec, latents):
    """Token grid(s) -> clipped float64 numpy image(s)."""
    with torch.no_grad():
        img = codec.decode(latents).double().clamp(0.0, 1.0)
    return img.numpy()


def sample(model, codec, c, steps=28, g=3.0, seed=0, noise=None):
    """Generate one ERP image (H, W, C) in [0, 1]."""
    x = sample_latent(model, c, steps, g, seed, noise=noise)
    return decode_image(codec, x)[0]


def invert(model, codec, img, c, steps=28):
    """Noise grid that regenerates ``img`` under :func:`sample` with g=1."""
    x0 = codec.encode(torch.as_tensor(img)[None])
    return invert_latent(model, x0, c, steps)[0]


def make_codec(config):
    """The frozen latent codec paired with models of ``config``."""
    return LatentCodec(config.patch, config.channels, config.latent_dim, seed=CODEC_SEED,
                       scale=config.latent_scale)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
