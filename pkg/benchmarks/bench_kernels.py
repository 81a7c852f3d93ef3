"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time of each backend
and the speedup. Outputs are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from pano360 import kernels
from pano360.geometry import erp_pixel_from_dir, face_rays, make_polar_face_mask


def cases():
    rng = np.random.default_rng(0)
    erp = rng.random((256, 512, 3))
    u, v = erp_pixel_from_dir(face_rays("front", 128), 512, 256)
    face = rng.random((128, 128, 3))
    known = make_polar_face_mask(128)
    seeded = face * known[..., None]
    return {
        "bilinear_wrap 512x256 -> 128^2": lambda b: kernels.bilinear_wrap(erp, u, v, backend=b),
        "bilinear_clamp 128^2 -> 128^2": lambda b: kernels.bilinear_clamp(face, u / 4, v / 2, backend=b),
        "harmonic_fill 128^2 (200 sweeps)": lambda b: kernels.harmonic_fill(
            seeded, known, tol=0.0, max_iter=200, backend=b)[0],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; only the numpy backend can run")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    for name, fn in cases().items():
        if len(backends) == 2 and not np.array_equal(fn("python"), fn("cython")):
            raise SystemExit(f"{name}: backends disagree")
        times = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends}
        line = f"{name:36s} python {times['python'] * 1e3:9.2f} ms"
        if "cython" in times:
            line += f"  cython {times['cython'] * 1e3:8.2f} ms  x{times['python'] / times['cython']:.1f}"
        print(line)


if __name__ == "__main__":
    main()
