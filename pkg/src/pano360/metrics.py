"""Panorama quality metrics that need no pretrained networks."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import (YawAngle, check_erp, cubemap_to_erp, erp_to_cubemap, latitude_weights,
                       yaw_rotate_erp)
from .model import decode_image, initial_noise, sample_latent
from .tokens import rotate_tokens

PSNR_CAP = 99.0


def psnr(a, b, mask=None, peak=1.0):
    """PSNR in dB, capped at 99 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise DomainError("PSNR mask selects nothing")
        sq = sq[m]
    err = float(np.mean(sq))
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / err))


def _column_steps(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    # |I[:, u+1] - I[:, u]| averaged over rows/channels, for every wrapped pair
    return np.abs(np.roll(img, -1, axis=1) - img).mean(axis=(0, 2))


def seam_discrepancy(img):
    """Wrap-pair column difference over mean interior adjacent difference.

    1.0 means the 0/360 seam is indistinguishable from any other column
    boundary. Constant images score 1.0 by convention.
    """
    img = check_erp(img)
    if img.shape[1] < 4:
        raise DomainError("seam discrepancy needs width >= 4")
    steps = _column_steps(img)
    seam, interior = steps[-1], steps[:-1].mean()
    if interior == 0.0:
        return 1.0 if seam == 0.0 else float("inf")
    return float(seam / interior)


def max_wrapped_step(img):
    """Largest adjacent-column difference over all wrapped pairs (yaw-invariant)."""
    return float(_column_steps(check_erp(img)).max())


def laplacian_wrap(img):
    """4-neighbour Laplacian, wrapping horizontally and replicating rows."""
    img = np.asarray(img, dtype=np.float64)
    up = np.concatenate([img[:1], img[:-1]], axis=0)
    down = np.concatenate([img[1:], img[-1:]], axis=0)
    return np.roll(img, 1, axis=1) + np.roll(img, -1, axis=1) + up + down - 4 * img


def pole_energy(img, band):
    """Solid-angle weighted mean squared Laplacian over the polar bands."""
    img = check_erp(img)
    h = img.shape[0]
    if not 0 < band < h / 2:
        raise DomainError(f"band must be in (0, {h / 2}), got {band}")
    lap = laplacian_wrap(img)
    if lap.ndim == 3:
        lap = (lap ** 2).mean(axis=2)
    else:
        lap = lap ** 2
    rows = np.r_[0:band, h - band:h]
    w = latitude_weights(h)[rows]
    return float((lap[rows].mean(axis=1) * w).sum() / w.sum())


def roundtrip_psnr(img, face_size, pole_rows=2):
    """PSNR of ERP -> cube -> ERP, ignoring ``pole_rows`` rows at each pole."""
    img = check_erp(img).astype(np.float64)
    h, w = img.shape[:2]
    back = cubemap_to_erp(erp_to_cubemap(img, face_size), w, h)
    sl = slice(pole_rows, h - pole_rows)
    return psnr(img[sl], back[sl])


def rotation_consistency(model, codec, c, shifts, seed=0, steps=28, g=3.0):
    """Mean PSNR between rotated samples and samples from rotated noise.

    ``shifts`` are yaw angles in whole token columns. For each shift ``k``
    compares ``yaw_rotate(sample(n), k)`` with ``sample(roll(n, k))``.
    """
    cfg = model.config
    noise = initial_noise((1,) + cfg.token_shape + (cfg.latent_dim,), seed)
    base = decode_image(codec, sample_latent(model, c, steps, g, noise=noise))[0]
    out = []
    for k in shifts:
        if k % cfg.token_shape[1] == 0:
            out.append(PSNR_CAP)
            continue
        rotated = decode_image(codec, sample_latent(model, c, steps, g, noise=rotate_tokens(noise, k)))[0]
        out.append(psnr(yaw_rotate_erp(base, YawAngle.from_shift(k, cfg.token_shape[1])), rotated))
    return float(np.mean(out))


@dataclass
class MetricReport:
    seam_ratio: float
    pole_energy: float
    roundtrip_psnr: float
    rotation_psnr: float | None = None
    samples: int = 1
    name: str = ""
    extra: dict = field(default_factory=dict)

    def to_line(self):
        parts = [f"name={self.name}"] if self.name else []
        parts += [f"seam_ratio={self.seam_ratio:.6g}", f"pole_energy={self.pole_energy:.6g}",
                  f"roundtrip_psnr={self.roundtrip_psnr:.6g}"]
        if self.rotation_psnr is not None:
            parts.append(f"rotation_psnr={self.rotation_psnr:.6g}")
        parts.append(f"samples={self.samples}")
        parts += [f"{k}={v:.6g}" for k, v in self.extra.items()]
        return " ".join(parts)


def image_report(img, name="", band=None, face_size=None):
    img = check_erp(img)
    h, w = img.shape[:2]
    return MetricReport(seam_discrepancy(img), pole_energy(img, band or max(1, h // 8)),
                        roundtrip_psnr(img, face_size or w // 4), name=name)


def aggregate(reports, name="aggregate"):
    return MetricReport(
        float(np.median([r.seam_ratio for r in reports])),
        float(np.mean([r.pole_energy for r in reports])),
        float(np.mean([r.roundtrip_psnr for r in reports])),
        samples=len(reports), name=name)


def bar_plot(reports, path):
    """PNG bar chart of per-image seam ratios (needs the ``plot`` extra)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(range(len(reports)), [r.seam_ratio for r in reports])
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_ylabel("seam ratio")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
