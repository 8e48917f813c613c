"""Time the numba and numpy forms of each hot kernel on representative sizes.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both forms are called directly, so the result does not depend on
VOLDIFF_NUMBA.  The first numba call (compilation) is excluded.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from voldiff import kernels
from voldiff._accel import HAS_NUMBA


def _cases(rng):
    rays, samples = 1024, 64
    sigma = rng.gamma(1.0, 2.0, size=(rays, samples, 3))
    color = rng.random((rays, samples, 3, 3))
    delta = rng.uniform(0.01, 0.1, size=(rays, samples))
    edges = np.cumsum(rng.uniform(0.01, 0.1, size=(rays, samples + 1)), axis=1)
    weights = rng.random((rays, samples)) + 1e-5
    u = np.sort(rng.random((rays, samples)), axis=1)
    pts = rng.uniform(-1, 1, size=(rays * samples, 3))
    ranked = rng.random(64 * 64 * 12) < 0.2
    ranked_s = np.sort(rng.random(ranked.size))[::-1].copy()
    out_pe = np.empty((pts.shape[0], 3 * 21))
    return {
        "composite_principled (1024x64x3)": (
            lambda: kernels.composite_principled_numba(sigma, color, delta),
            lambda: kernels.composite_principled_numpy(sigma, color, delta)),
        "sample_pdf (1024 rays, 64 bins, 64 draws)": (
            lambda: kernels.sample_pdf_numba(edges, weights, u),
            lambda: kernels.sample_pdf_numpy(edges, weights, u)),
        "fourier_features (65536x3, L=10)": (
            lambda: kernels.fourier_features_numba(pts, 10, out_pe),
            lambda: kernels.fourier_features_numpy(pts, 10, out_pe)),
        "ranked_ap (49152 pixels)": (
            lambda: kernels.ranked_ap_numba(ranked_s, ranked),
            lambda: kernels.ranked_ap_numpy(ranked_s, ranked)),
        "subsegment_weights (P=3, n=1e6)": (
            lambda: kernels.subsegment_weights_numba(np.array([1.0, 2.0, 0.5]), 0.7, 1_000_000),
            lambda: kernels.subsegment_weights_numpy(np.array([1.0, 2.0, 0.5]), 0.7, 1_000_000)),
    }


def _best(fn, repeat):
    number = 1
    # grow the loop count until one measurement takes at least 20 ms
    while timeit.timeit(fn, number=number) < 0.02 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<44} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, (fast, slow) in _cases(rng).items():
        a, b = fast(), slow()
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            if not np.allclose(x, y, rtol=1e-9, atol=1e-12):
                print(f"{name}: numba and numpy results disagree", file=sys.stderr)
                return 1
        t_nb, t_np = _best(fast, args.repeat), _best(slow, args.repeat)
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb})
        print(f"{name:<44} {t_nb * 1e3:>10.3f} {t_np * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
