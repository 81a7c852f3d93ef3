# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled resampling and harmonic-fill kernels.

Semantics match :mod:`pano360._pykernels` exactly; the test suite checks the
two against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


def bilinear_wrap(const double[:, :, ::1] img, const double[::1] u,
                  const double[::1] v):
    """Sample ``img`` (H, W, C) at continuous pixel coords, wrapping columns
    and clamping rows. Returns (N, C)."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t n = u.shape[0], i, k, x0, x1, y0, y1
    cdef double uu, vv, fx, fy, w00, w01, w10, w11
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        uu = u[i]
        vv = v[i]
        if vv < 0.0:
            vv = 0.0
        elif vv > h - 1:
            vv = h - 1
        x0 = <Py_ssize_t>floor(uu)
        fx = uu - x0
        y0 = <Py_ssize_t>floor(vv)
        if y0 > h - 2:
            y0 = h - 2 if h > 1 else 0
        fy = vv - y0
        y1 = y0 + 1 if h > 1 else 0
        x0 = x0 % w
        if x0 < 0:
            x0 += w
        x1 = x0 + 1
        if x1 == w:
            x1 = 0
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        for k in range(c):
            o[i, k] = (w00 * img[y0, x0, k] + w01 * img[y0, x1, k]
                       + w10 * img[y1, x0, k] + w11 * img[y1, x1, k])
    return out


def bilinear_clamp(const double[:, :, ::1] img, const double[::1] u,
                   const double[::1] v):
    """Sample ``img`` (H, W, C) clamping both axes. Returns (N, C)."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t n = u.shape[0], i, k, x0, x1, y0, y1
    cdef double uu, vv, fx, fy, w00, w01, w10, w11
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        uu = u[i]
        vv = v[i]
        if uu < 0.0:
            uu = 0.0
        elif uu > w - 1:
            uu = w - 1
        if vv < 0.0:
            vv = 0.0
        elif vv > h - 1:
            vv = h - 1
        x0 = <Py_ssize_t>floor(uu)
        if x0 > w - 2:
            x0 = w - 2 if w > 1 else 0
        y0 = <Py_ssize_t>floor(vv)
        if y0 > h - 2:
            y0 = h - 2 if h > 1 else 0
        fx = uu - x0
        fy = vv - y0
        x1 = x0 + 1 if w > 1 else 0
        y1 = y0 + 1 if h > 1 else 0
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        for k in range(c):
            o[i, k] = (w00 * img[y0, x0, k] + w01 * img[y0, x1, k]
                       + w10 * img[y1, x0, k] + w11 * img[y1, x1, k])
    return out


cdef double _update_color(double[:, :, ::1] img, const unsigned char[:, ::1] known,
                          int parity, double omega):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t y, x, k
    cdef double s, cnt, new, delta, worst = 0.0
    for y in range(h):
        for x in range(w):
            if known[y, x] or (y + x) % 2 != parity:
                continue
            for k in range(c):
                s = 0.0
                cnt = 0.0
                if y > 0:
                    s = s + img[y - 1, x, k]
                    cnt = cnt + 1.0
                if y < h - 1:
                    s = s + img[y + 1, x, k]
                    cnt = cnt + 1.0
                if x > 0:
                    s = s + img[y, x - 1, k]
                    cnt = cnt + 1.0
                if x < w - 1:
                    s = s + img[y, x + 1, k]
                    cnt = cnt + 1.0
                new = img[y, x, k] + omega * (s / cnt - img[y, x, k])
                delta = fabs(new - img[y, x, k])
                if delta > worst:
                    worst = delta
                img[y, x, k] = new
    return worst


def harmonic_fill(double[:, :, ::1] img, const unsigned char[:, ::1] known,
                  double tol, long max_iter, double omega=1.0):
    """Red-black Gauss-Seidel relaxation of the unknown pixels, in place.

    Returns the number of sweeps performed."""
    cdef long it
    cdef double a, b
    for it in range(max_iter):
        a = _update_color(img, known, 0, omega)
        b = _update_color(img, known, 1, omega)
        if a < tol and b < tol:
            return it + 1
    return max_iter
