"""Pure-numpy versions of the hot kernels.

Used when the compiled extension is unavailable or ``PANO360_PURE_PYTHON=1``.
Arithmetic order mirrors ``_ckernels.pyx`` so both backends agree bit-for-bit
on the same platform.
"""
import numpy as np


def _bilinear(img, x0, x1, y0, y1, fx, fy):
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    return (w00[:, None] * img[y0, x0] + w01[:, None] * img[y0, x1]
            + w10[:, None] * img[y1, x0] + w11[:, None] * img[y1, x1])


def _rows(v, h):
    v = np.clip(v, 0.0, h - 1)
    y0 = np.floor(v).astype(np.intp)
    if h > 1:
        y0 = np.minimum(y0, h - 2)
        y1 = y0 + 1
    else:
        y0 = np.zeros_like(y0)
        y1 = y0
    return y0, y1, v - y0


def bilinear_wrap(img, u, v):
    h, w = img.shape[:2]
    x0 = np.floor(u).astype(np.intp)
    fx = u - x0
    x0 = x0 % w
    x1 = (x0 + 1) % w
    y0, y1, fy = _rows(v, h)
    return _bilinear(img, x0, x1, y0, y1, fx, fy)


def bilinear_clamp(img, u, v):
    h, w = img.shape[:2]
    x0, x1, fx = _rows(u, w)
    y0, y1, fy = _rows(v, h)
    return _bilinear(img, x0, x1, y0, y1, fx, fy)


def _neighbour_sums(img):
    h, w = img.shape[:2]
    s = np.zeros_like(img)
    cnt = np.zeros((h, w, 1))
    s[1:] += img[:-1]
    cnt[1:] += 1.0
    s[:-1] += img[1:]
    cnt[:-1] += 1.0
    s[:, 1:] += img[:, :-1]
    cnt[:, 1:] += 1.0
    s[:, :-1] += img[:, 1:]
    cnt[:, :-1] += 1.0
    return s, cnt


def harmonic_fill(img, known, tol, max_iter, omega=1.0):
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    colors = [((yy + xx) % 2 == p) & (known == 0) for p in (0, 1)]
    for it in range(max_iter):
        worst = []
        for sel in colors:
            s, cnt = _neighbour_sums(img)
            old = img[sel]
            new = old + omega * (s[sel] / cnt[sel] - old)
            worst.append(np.abs(new - old).max(initial=0.0))
            img[sel] = new
        if worst[0] < tol and worst[1] < tol:
            return it + 1
    return max_iter
