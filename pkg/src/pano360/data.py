"""Procedural panoramas, perspective ingestion, polar refinement and the
hybrid branch sampler."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import DomainError
from .geometry import (LATERAL_FACES, apply_mask, check_erp, cubemap_to_erp, dir_from_erp_pixel,
                       dir_from_lonlat, erp_to_cubemap, face_coords_from_dir, face_rays,
                       lonlat_from_erp_pixel, make_polar_face_mask, perspective_to_erp)
from .tokens import downsample_mask

FAMILIES = ("gradient_sky", "bands", "checker", "blobs")


@dataclass(frozen=True)
class SceneSpec:
    """A procedural scene: family id, seed, and optional parameter overrides.

    ``yaw`` (radians) offsets the scene in longitude; other parameters are
    drawn from ``seed`` unless given in ``params``.
    """

    class_id: int
    seed: int = 0
    yaw: float = 0.0
    params: tuple = ()

    def resolved(self):
        if not 0 <= self.class_id < len(FAMILIES):
            raise DomainError(f"unknown scene class {self.class_id}")
        rng = np.random.default_rng([self.class_id, self.seed])
        p = _DRAW[self.class_id](rng)
        p.update(dict(self.params))
        return p

    def to_record(self):
        extra = "".join(f",{k}={v}" for k, v in self.params)
        return f"scene:class={self.class_id},seed={self.seed},yaw={self.yaw!r}{extra}"

    @classmethod
    def from_record(cls, text):
        if not text.startswith("scene:"):
            raise DomainError(f"not a scene record: {text!r}")
        kv = dict(item.split("=", 1) for item in text[len("scene:"):].split(","))
        cid, seed, yaw = int(kv.pop("class")), int(kv.pop("seed", 0)), float(kv.pop("yaw", 0.0))
        return cls(cid, seed, yaw, tuple((k, float(v)) for k, v in kv.items()))


def _colour(rng):
    return rng.uniform(0.1, 0.9, size=3)


def _draw_sky(rng):
    return {"top": _colour(rng), "bottom": _colour(rng), "horizon": rng.uniform(-0.3, 0.3),
            "sharpness": rng.uniform(2.0, 6.0)}


def _draw_bands(rng):
    n = rng.normal(size=3)
    return {"normal": n / np.linalg.norm(n), "freq": float(rng.integers(2, 5)),
            "c0": _colour(rng), "c1": _colour(rng)}


def _draw_checker(rng):
    return {"n_lon": float(rng.integers(2, 5)), "n_lat": float(rng.integers(1, 4)),
            "c0": _colour(rng), "c1": _colour(rng), "sharpness": rng.uniform(1.5, 4.0)}


def _draw_blobs(rng):
    k = int(rng.integers(2, 5))
    centres = rng.normal(size=(k, 3))
    return {"centres": centres / np.linalg.norm(centres, axis=1, keepdims=True),
            "kappa": rng.uniform(3.0, 10.0, size=k), "colours": rng.uniform(0.0, 1.0, size=(k, 3)),
            "base": _colour(rng) * 0.5}


_DRAW = (_draw_sky, _draw_bands, _draw_checker, _draw_blobs)


def _lerp(c0, c1, s):
    return c0 + (c1 - c0) * s[..., None]


def render_directions(spec, lon, lat):
    """Evaluate a scene's spherical colour function at (lon, lat) arrays."""
    p = spec.resolved()
    lon = lon - spec.yaw
    cid = spec.class_id
    if cid == 0:
        s = 0.5 + 0.5 * np.tanh(p["sharpness"] * (lat - p["horizon"]))
        img = _lerp(p["bottom"], p["top"], s)
    elif cid == 1:
        d = dir_from_lonlat(lon, lat)
        s = 0.5 + 0.5 * np.cos(p["freq"] * np.arcsin(np.clip(d @ p["normal"], -1, 1)) * 2)
        img = _lerp(p["c0"], p["c1"], s)
    elif cid == 2:
        s = 0.5 + 0.5 * np.tanh(p["sharpness"] * np.sin(p["n_lon"] * lon)
                                * np.sin(p["n_lat"] * (lat + np.pi / 2)))
        img = _lerp(p["c0"], p["c1"], s)
    else:
        d = dir_from_lonlat(lon, lat)
        img = np.broadcast_to(p["base"], d.shape).copy()
        for mu, kappa, col in zip(p["centres"], p["kappa"], p["colours"]):
            wgt = np.exp(kappa * (d @ mu - 1.0))
            img = img * (1 - wgt[..., None]) + col * wgt[..., None]
    return np.clip(img, 0.0, 1.0)


def gen_procedural_pano(spec, width=128, height=64):
    """Render an ERP panorama of a procedural scene.

    A yaw offset that is a whole number of columns is applied on the pixel
    lattice (column index arithmetic), so such offsets are exact column
    shifts of the unrotated render.
    """
    if width != 2 * height:
        raise DomainError(f"ERP width must be twice the height, got {width}x{height}")
    spec.resolved()
    cols = np.arange(width)
    shift = spec.yaw / (2 * np.pi) * width
    if abs(shift - round(shift)) < 1e-9:
        cols = (cols - int(round(shift))) % width
        base = SceneSpec(spec.class_id, spec.seed, 0.0, spec.params)
    else:
        base = spec
    vv, uu = np.meshgrid(np.arange(height), cols, indexing="ij")
    lon, lat = lonlat_from_erp_pixel(uu, vv, width, height)
    return render_directions(base, lon, lat)


def render_perspective(spec, face, size):
    """Render a scene as seen through one 90-degree cube face."""
    d = face_rays(face, size)
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(d[..., 1], -1, 1))
    return render_directions(spec, lon, lat)


def ingest_perspective(img, size=None):
    """Centre-crop to square, then (optionally) resize to ``size``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if min(h, w) < 8:
        raise DomainError(f"perspective image too small: {w}x{h}")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = img[top:top + side, left:left + side]
    if size is None or size == side:
        return crop
    chans = [np.asarray(Image.fromarray(crop[..., k].astype(np.float32), mode="F")
                        .resize((size, size), Image.BILINEAR)) for k in range(crop.shape[2])]
    return np.clip(np.stack(chans, -1).astype(np.float64), 0.0, 1.0)


# --------------------------------------------------------------------------
# polar refinement


def fill_inpaint(face, mask, tol=1e-4, max_iter=10_000):
    """Harmonic fill of pixels where ``mask == 0``; known pixels are fixed."""
    mask = np.asarray(mask)
    if mask.shape != np.asarray(face).shape[:2]:
        raise DomainError("mask does not match face shape")
    if not np.any(mask):
        raise DomainError("cannot fill a face with no known pixels")
    filled, _ = kernels.harmonic_fill(face, mask, tol, max_iter)
    return filled


def refine_poles(img, inpainter=fill_inpaint, face_size=None, fill=1.0):
    """Re-synthesise the centres of the top and bottom cube faces.

    Pixels whose directions fall on lateral faces are returned unchanged.
    """
    img = check_erp(img).astype(np.float64)
    h, w = img.shape[:2]
    face_size = face_size or w // 4
    faces = erp_to_cubemap(img, face_size)
    mask = make_polar_face_mask(face_size)
    for f in (4, 5):
        faces[f] = inpainter(apply_mask(faces[f], mask, fill), mask)
    back = cubemap_to_erp(faces, w, h)
    vv, uu = np.mgrid[0:h, 0:w]
    polar = face_coords_from_dir(dir_from_erp_pixel(uu, vv, w, h))[0] >= 4
    out = img.copy()
    out[polar] = back[polar]
    return out


def blur_poles(img, band, passes=8):
    """Smear the top and bottom ``band`` rows (synthetic polar blur)."""
    out = np.asarray(img, dtype=np.float64).copy()
    for _ in range(passes):
        sm = (np.roll(out, 1, 1) + np.roll(out, -1, 1) + 2 * out) / 4
        out[:band] = sm[:band]
        out[-band:] = sm[-band:]
    for r in range(band):
        out[r] = out[r].mean(axis=0) * (1 - r / band) + out[r] * (r / band)
        out[-1 - r] = out[-1 - r].mean(axis=0) * (1 - r / band) + out[-1 - r] * (r / band)
    return out


# --------------------------------------------------------------------------
# hybrid batches


@dataclass(frozen=True)
class MixPolicy:
    p_pano: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.p_pano <= 1.0:
            raise DomainError(f"p_pano must be in [0, 1], got {self.p_pano}")

    @property
    def p_persp(self):
        return 1.0 - self.p_pano


def mix_batches(policy, rng, n=None):
    """Yield ``"pano"`` / ``"persp"`` branch tags, i.i.d. per step."""
    i = 0
    while n is None or i < n:
        yield "pano" if rng.random() < policy.p_pano else "persp"
        i += 1


@dataclass
class Batch:
    branch: str
    images: np.ndarray  # (B, H, W, C)
    class_ids: np.ndarray
    token_mask: np.ndarray | None = None  # (B, h, w), perspective only


@dataclass
class HybridData:
    """Pre-rendered training pools for both branches."""

    width: int = 128
    height: int = 64
    patch: int = 4
    n_pano: int = 2000
    n_persp: int = 500
    seed: int = 0
    refine: bool = True
    panos: np.ndarray = field(init=False, repr=False)
    pano_classes: np.ndarray = field(init=False, repr=False)
    persp: list = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        classes = rng.integers(0, len(FAMILIES), size=self.n_pano)
        panos = []
        for i, cid in enumerate(classes):
            spec = SceneSpec(int(cid), seed=int(rng.integers(1 << 30)),
                             yaw=float(rng.uniform(0, 2 * np.pi)))
            img = gen_procedural_pano(spec, self.width, self.height)
            panos.append(refine_poles(img) if self.refine else img)
        self.panos = np.stack(panos).astype(np.float32)
        self.pano_classes = classes
        face_size = self.width // 4
        self.persp = []
        for _ in range(self.n_persp):
            cid = int(rng.integers(0, len(FAMILIES)))
            spec = SceneSpec(cid, seed=int(rng.integers(1 << 30)), yaw=float(rng.uniform(0, 2 * np.pi)))
            face = LATERAL_FACES[int(rng.integers(0, 4))]
            view = render_perspective(spec, "front", 2 * face_size)
            erp, mask = perspective_to_erp(ingest_perspective(view, face_size), face, self.width, self.height)
            self.persp.append((erp.astype(np.float32), downsample_mask(mask, self.patch), cid))

    def batch(self, branch, rng, size=1):
        if branch == "pano":
            idx = rng.integers(0, len(self.panos), size=size)
            return Batch("pano", self.panos[idx], self.pano_classes[idx])
        idx = rng.integers(0, len(self.persp), size=size)
        items = [self.persp[i] for i in idx]
        return Batch("persp", np.stack([it[0] for it in items]),
                     np.array([it[2] for it in items]), np.stack([it[1] for it in items]))


# --------------------------------------------------------------------------
# manifests


def write_manifest(path, records):
    """``records``: iterable of (source, branch, class_id); tab-separated lines."""
    with open(path, "w", encoding="utf-8") as f:
        for source, branch, cid in records:
            if branch not in ("pano", "persp"):
                raise DomainError(f"unknown branch tag {branch!r}")
            src = source.to_record() if isinstance(source, SceneSpec) else str(source)
            f.write(f"{src}\t{branch}\t{int(cid)}\n")


def read_manifest(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[1] not in ("pano", "persp"):
            raise DomainError(f"{path}:{lineno}: malformed manifest record")
        src = SceneSpec.from_record(parts[0]) if parts[0].startswith("scene:") else Path(parts[0])
        out.append((src, parts[1], int(parts[2])))
    return out
