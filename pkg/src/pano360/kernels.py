"""Backend selection for the resampling and fill kernels.

The compiled Cython module is used when importable; set
``PANO360_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("PANO360_PURE_PYTHON", "0") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def _prep(img):
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    return np.ascontiguousarray(img), squeeze


def bilinear_wrap(img, u, v, backend=None):
    """Bilinear lookup with horizontal wrap and vertical clamp.

    ``u``/``v`` are continuous pixel-centre coordinates of any (matching)
    shape; the result has shape ``u.shape + (C,)`` (or ``u.shape`` for 2-D
    input images).
    """
    impl = _select(backend)
    img, squeeze = _prep(img)
    u = np.asarray(u, dtype=np.float64)
    shape = u.shape
    out = impl.bilinear_wrap(img, np.ascontiguousarray(u.ravel()),
                             np.ascontiguousarray(np.asarray(v, dtype=np.float64).ravel()))
    out = np.asarray(out).reshape(shape + (img.shape[2],))
    return out[..., 0] if squeeze else out


def bilinear_clamp(img, u, v, backend=None):
    """Bilinear lookup clamped at all four edges."""
    impl = _select(backend)
    img, squeeze = _prep(img)
    u = np.asarray(u, dtype=np.float64)
    shape = u.shape
    out = impl.bilinear_clamp(img, np.ascontiguousarray(u.ravel()),
                              np.ascontiguousarray(np.asarray(v, dtype=np.float64).ravel()))
    out = np.asarray(out).reshape(shape + (img.shape[2],))
    return out[..., 0] if squeeze else out


def harmonic_fill(img, known, tol=1e-4, max_iter=10_000, omega=1.0, backend=None):
    """Relax unknown pixels toward the mean of their 4-neighbours.

    Returns ``(filled, sweeps)``; the input is not modified.
    """
    impl = _select(backend)
    work, squeeze = _prep(img)
    work = work.copy()
    known = np.ascontiguousarray(np.asarray(known) != 0, dtype=np.uint8)
    sweeps = impl.harmonic_fill(work, known, float(tol), int(max_iter), float(omega))
    return (work[..., 0] if squeeze else work), int(sweeps)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
