"""Spherical geometry for equirectangular (ERP) panoramas.

Conventions used throughout the package:

* y is up, longitude 0 looks down +z, longitude grows toward +x.
* ERP pixel ``(u, v)`` (column, row) has its centre at
  ``lon = (u + 0.5) / W * 2pi - pi`` and ``lat = pi/2 - (v + 0.5) / H * pi``.
* Cube faces are ordered ``front, right, back, left, top, bottom`` and each
  covers a 90 degree field of view. Images are ``(H, W, C)`` float arrays,
  cube face sets are ``(6, S, S, C)``.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import DomainError

FACE_NAMES = ("front", "right", "back", "left", "top", "bottom")
LATERAL_FACES = FACE_NAMES[:4]


def check_erp(img):
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise DomainError(f"ERP image must be (H, W[, C]), got shape {img.shape}")
    h, w = img.shape[:2]
    if w != 2 * h:
        raise DomainError(f"ERP width must be twice the height, got {w}x{h}")
    return img


def face_id(face):
    if isinstance(face, str):
        try:
            return FACE_NAMES.index(face)
        except ValueError:
            raise DomainError(f"unknown cube face {face!r}") from None
    face = int(face)
    if not 0 <= face < 6:
        raise DomainError(f"face index must be in 0..5, got {face}")
    return face


# --------------------------------------------------------------------------
# pixel <-> direction


def lonlat_from_erp_pixel(u, v, width, height):
    lon = (np.asarray(u, dtype=np.float64) + 0.5) / width * (2 * np.pi) - np.pi
    lat = np.pi / 2 - (np.asarray(v, dtype=np.float64) + 0.5) / height * np.pi
    return lon, lat


def dir_from_lonlat(lon, lat):
    c = np.cos(lat)
    return np.stack([c * np.sin(lon), np.sin(lat), c * np.cos(lon)], axis=-1)


def dir_from_erp_pixel(u, v, width, height):
    """Unit direction(s) through the centre of ERP pixel(s) ``(u, v)``.

    Accepts scalars or arrays; returns shape ``broadcast(u, v) + (3,)``.
    """
    u_arr = np.asarray(u)
    v_arr = np.asarray(v)
    if np.any((u_arr < 0) | (u_arr >= width)) or np.any((v_arr < 0) | (v_arr >= height)):
        raise DomainError(f"pixel ({u}, {v}) outside {width}x{height} ERP grid")
    lon, lat = lonlat_from_erp_pixel(u_arr, v_arr, width, height)
    return dir_from_lonlat(*np.broadcast_arrays(lon, lat))


def erp_pixel_from_dir(d, width, height):
    """Continuous ERP coordinates ``(u, v)`` of direction(s) ``d``.

    Directions need not be normalised. At the poles longitude is undefined;
    ``u = width/2 - 0.5`` (longitude 0) is returned there.
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0):
        raise DomainError("zero vector has no direction")
    x, y, z = (d[..., i] / norm for i in range(3))
    polar = (x == 0) & (z == 0)
    lon = np.where(polar, 0.0, np.arctan2(x, np.where(polar, 1.0, z)))
    lat = np.arcsin(np.clip(y, -1.0, 1.0))
    u = (lon + np.pi) / (2 * np.pi) * width - 0.5
    v = (np.pi / 2 - lat) / np.pi * height - 0.5
    return u, v


# --------------------------------------------------------------------------
# cube faces


def _face_dir(face, a, b):
    # a: image-right coordinate, b: image-down coordinate, both in [-1, 1]
    one = np.ones_like(a)
    return np.stack({
        0: (a, -b, one),
        1: (one, -b, -a),
        2: (-a, -b, -one),
        3: (-one, -b, a),
        4: (a, one, b),
        5: (a, -one, -b),
    }[face], axis=-1)


def face_rays(face, face_size):
    """Unit directions through the pixel centres of one cube face, (S, S, 3)."""
    face = face_id(face)
    t = (np.arange(face_size) + 0.5) / face_size * 2.0 - 1.0
    a, b = np.meshgrid(t, t)
    d = _face_dir(face, a, b)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def face_coords_from_dir(d):
    """Dominant face index and continuous face pixel coordinates for ``d``.

    Returns ``(face, a, b)`` where ``a``/``b`` are in ``[-1, 1]`` face units
    (image-right, image-down). Ties between axes go to the lower face index.
    """
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    face = np.where(
        (az >= ax) & (az >= ay), np.where(z > 0, 0, 2),
        np.where(ax >= ay, np.where(x > 0, 1, 3), np.where(y > 0, 4, 5)))
    a = np.empty_like(x)
    b = np.empty_like(x)
    for f, (num_a, num_b, den) in enumerate((
            (x, -y, z), (-z, -y, x), (-x, -y, -z), (z, -y, -x), (x, z, y), (x, -z, -y))):
        sel = face == f
        a[sel] = num_a[sel] / den[sel]
        b[sel] = num_b[sel] / den[sel]
    return face, a, b


def _face_pixel(a, face_size):
    return (a + 1.0) / 2.0 * face_size - 0.5


def erp_to_cubemap(img, face_size):
    """Resample an ERP image into six 90-degree cube faces, (6, S, S, C)."""
    img = check_erp(img)
    if face_size < 2:
        raise DomainError(f"face_size must be >= 2, got {face_size}")
    h, w = img.shape[:2]
    faces = []
    for f in range(6):
        u, v = erp_pixel_from_dir(face_rays(f, face_size), w, h)
        faces.append(kernels.bilinear_wrap(img, u, v))
    return np.stack(faces)


def cubemap_to_erp(faces, width, height):
    """Reproject a cube face set onto a ``height x width`` ERP grid.

    Each ERP pixel samples (bilinear, edge-clamped) the face whose axis
    dominates its direction.
    """
    faces = np.asarray(faces, dtype=np.float64)
    if faces.ndim not in (3, 4) or faces.shape[0] != 6 or faces.shape[1] != faces.shape[2]:
        raise DomainError(f"cube faces must be (6, S, S[, C]), got {faces.shape}")
    if width != 2 * height:
        raise DomainError(f"ERP width must be twice the height, got {width}x{height}")
    squeeze = faces.ndim == 3
    if squeeze:
        faces = faces[..., None]
    size = faces.shape[1]
    vv, uu = np.mgrid[0:height, 0:width]
    face, a, b = face_coords_from_dir(dir_from_erp_pixel(uu, vv, width, height))
    out = np.empty((height, width, faces.shape[3]))
    for f in range(6):
        sel = face == f
        out[sel] = kernels.bilinear_clamp(faces[f], _face_pixel(a[sel], size),
                                          _face_pixel(b[sel], size))
    return out[..., 0] if squeeze else out


def cubemap_sampling_plan(height, width, face_size):
    """Sparse bilinear weights realising :func:`erp_to_cubemap` as a linear map.

    Returns ``(index, weight)``, both ``(6*S*S, 4)``: output sample ``k`` is
    ``sum_j weight[k, j] * flat_erp[index[k, j]]`` with ``flat_erp`` the
    ``(H*W, ...)`` row-major reshape of the ERP field. Used for
    differentiable cube mapping of token grids.
    """
    if width != 2 * height:
        raise DomainError(f"ERP width must be twice the height, got {width}x{height}")
    rays = np.stack([face_rays(f, face_size) for f in range(6)]).reshape(-1, 3)
    u, v = erp_pixel_from_dir(rays, width, height)
    v = np.clip(v, 0.0, height - 1)
    x0 = np.floor(u).astype(np.int64)
    fx = u - x0
    x0 %= width
    x1 = (x0 + 1) % width
    y0 = np.minimum(np.floor(v).astype(np.int64), max(height - 2, 0))
    fy = v - y0
    y1 = np.minimum(y0 + 1, height - 1)
    index = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1)
    weight = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return index, weight


# --------------------------------------------------------------------------
# yaw


@dataclass(frozen=True)
class YawAngle:
    """A yaw rotation. With ``width`` set the angle is snapped to whole
    columns of a grid that wide (quantized mode)."""

    radians: float
    width: int | None = None

    def __post_init__(self):
        r = float(self.radians) % (2 * math.pi)
        if self.width is not None:
            shift = round(r / (2 * math.pi) * self.width) % self.width
            r = shift * 2 * math.pi / self.width
        object.__setattr__(self, "radians", r)

    @classmethod
    def from_shift(cls, shift, width):
        return cls(int(shift) % width * 2 * math.pi / width, width)

    @property
    def quantized(self):
        return self.width is not None

    @property
    def pixel_shift(self):
        if self.width is None:
            raise DomainError("continuous yaw angle has no integer pixel shift")
        return round(self.radians / (2 * math.pi) * self.width) % self.width

    def shift_for(self, width):
        """Integer column shift on a grid ``width`` columns wide."""
        exact = self.radians / (2 * math.pi) * width
        shift = round(exact)
        if self.width is not None:
            if (self.pixel_shift * width) % self.width:
                raise DomainError(
                    f"yaw of {self.pixel_shift}/{self.width} turns is not a whole "
                    f"number of columns at width {width}")
            shift = self.pixel_shift * width // self.width
        elif abs(exact - shift) > 1e-9:
            raise DomainError(f"yaw {self.radians} rad is not quantized at width {width}")
        return shift % width

    def __neg__(self):
        if self.width is not None:
            return YawAngle.from_shift(-self.pixel_shift, self.width)
        return YawAngle(-self.radians)


def yaw_rotate_erp(img, a, quantized=True):
    """Rotate a panorama about the vertical axis by ``a``.

    Content at longitude ``lon`` moves to ``lon + a``. In quantized mode this
    is an exact circular column shift (``a`` is snapped to whole columns if it
    is a bare float); otherwise columns are resampled bilinearly.
    """
    img = check_erp(img)
    w = img.shape[1]
    if not isinstance(a, YawAngle):
        a = YawAngle(a, w if quantized else None)
    if quantized or a.quantized:
        return np.roll(img, a.shift_for(w), axis=1)
    h = img.shape[0]
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    return kernels.bilinear_wrap(img, uu - a.radians / (2 * np.pi) * w, vv).reshape(img.shape)


# --------------------------------------------------------------------------
# masks


def check_mask(mask):
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise DomainError("mask values must be exactly 0 or 1")
    return mask


def make_polar_face_mask(face_size):
    """Keep-mask for a polar face: 0 on the central half-extent square."""
    if face_size <= 0 or face_size % 4:
        raise DomainError(f"face_size must be a positive multiple of 4, got {face_size}")
    m = np.ones((face_size, face_size), dtype=np.uint8)
    lo, hi = face_size // 4, 3 * face_size // 4
    m[lo:hi, lo:hi] = 0
    return m


def apply_mask(img, mask, fill=1.0):
    """``img * M + (1 - M) * fill``; ``fill`` is a scalar or per-channel colour."""
    img = np.asarray(img, dtype=np.float64)
    mask = check_mask(mask)
    if mask.shape != img.shape[:2]:
        raise DomainError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    m = mask.astype(np.float64)
    if img.ndim == 3:
        m = m[..., None]
    return img * m + (1.0 - m) * np.asarray(fill, dtype=np.float64)


def perspective_to_erp(persp, face, width, height):
    """Treat a square image as a 90-degree lateral cube face and reproject it.

    Returns ``(erp, mask)``; ``mask`` is 1 exactly on ERP pixels whose
    direction falls in that face's footprint, and ``erp`` is zero elsewhere.
    """
    persp = np.asarray(persp, dtype=np.float64)
    if persp.ndim not in (2, 3) or persp.shape[0] != persp.shape[1]:
        raise DomainError(f"perspective image must be square, got {persp.shape}")
    f = face_id(face)
    if FACE_NAMES[f] not in LATERAL_FACES:
        raise DomainError("perspective guidance only projects onto lateral faces")
    if width != 2 * height:
        raise DomainError(f"ERP width must be twice the height, got {width}x{height}")
    return _project_face(persp, f, width, height)


def erp_to_face(img, face, face_size):
    """Single cube face of an ERP image."""
    img = check_erp(img)
    h, w = img.shape[:2]
    u, v = erp_pixel_from_dir(face_rays(face, face_size), w, h)
    return kernels.bilinear_wrap(img, u, v)


def replace_face(img, face, new_face):
    """Copy of ``img`` with the footprint of ``face`` resampled from ``new_face``."""
    img = check_erp(img).astype(np.float64)
    h, w = img.shape[:2]
    proj, mask = _project_face(new_face, face_id(face), w, h)
    out = img.copy()
    out[mask == 1] = proj[mask == 1]
    return out


def _project_face(face_img, f, width, height):
    face_img = np.asarray(face_img, dtype=np.float64)
    size = face_img.shape[0]
    vv, uu = np.mgrid[0:height, 0:width]
    fidx, a, b = face_coords_from_dir(dir_from_erp_pixel(uu, vv, width, height))
    mask = (fidx == f).astype(np.uint8)
    out = np.zeros((height, width) + face_img.shape[2:])
    sel = mask == 1
    out[sel] = kernels.bilinear_clamp(face_img, _face_pixel(a[sel], size), _face_pixel(b[sel], size))
    return out, mask


def latitude_weights(height):
    """Per-row solid-angle weights (cos latitude) of an ERP grid."""
    _, lat = lonlat_from_erp_pixel(0, np.arange(height), 2 * height, height)
    return np.cos(lat)
