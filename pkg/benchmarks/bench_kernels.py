#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs every hot kernel on representative inputs, checks the two paths agree,
and prints a timing table. The numpy path is selected at import time via
VOICETRIAGE_BACKEND=numpy; here both implementations are imported directly so
a single process can compare them.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import sys
import time

import numpy as np

try:
    from voicetriage.kernels import _numba, _numpy
except ImportError:
    print("numba unavailable: nothing to compare", file=sys.stderr)
    sys.exit(1)


def timeit(fn, args, repeat):
    fn(*args)  # warm-up (includes JIT compilation for the numba path)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def compare(name, args, repeat, rtol=1e-9, atol=1e-12, pick=None):
    t_nb, out_nb = timeit(getattr(_numba, name), args, repeat)
    t_np, out_np = timeit(getattr(_numpy, name), args, repeat)
    if pick is not None:
        out_nb = pick(out_nb)
        out_np = pick(out_np)
    outs_nb = out_nb if isinstance(out_nb, tuple) else (out_nb,)
    outs_np = out_np if isinstance(out_np, tuple) else (out_np,)
    agree = all(
        np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(outs_nb, outs_np)
    )
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:18s} numba {t_nb * 1e3:9.2f} ms   numpy {t_np * 1e3:9.2f} ms   "
          f"speedup {speedup:6.1f}x   agree={agree}")
    return agree


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    ok = True

    frames = rng.normal(size=(40, 1470))
    ok &= compare("ncc_matrix", (frames, 88, 735), args.repeat, rtol=1e-8, atol=1e-10)

    x = rng.normal(size=44100)
    ok &= compare("sinc_resample", (x, 11025, 4.0, 0.25, 32, 9.0), args.repeat,
                  rtol=1e-9, atol=1e-12)

    exc = np.zeros(44100)
    exc[::441] = 1.0
    a1 = np.array([1.9, 1.7, 1.2])
    a2 = np.array([-0.95, -0.93, -0.9])
    g = np.array([0.05, 0.1, 0.3])
    ok &= compare("iir_cascade", (exc, a1, a2, g), args.repeat)

    xc = rng.normal(size=(8, 8, 64, 128)).astype(np.float32)
    w = rng.normal(size=(16, 8, 3, 3)).astype(np.float32) * 0.1
    b = rng.normal(size=16).astype(np.float32)
    ok &= compare("conv3x3_fwd", (xc, w, b), args.repeat, rtol=2e-3, atol=2e-3)
    dy = rng.normal(size=(8, 16, 64, 128)).astype(np.float32)
    ok &= compare("conv3x3_bwd_x", (dy, w), args.repeat, rtol=2e-3, atol=2e-3)
    ok &= compare("conv3x3_bwd_w", (xc, dy), args.repeat, rtol=2e-3, atol=2e-1)

    xp = rng.normal(size=(16, 16, 64, 128)).astype(np.float32)
    ok &= compare("maxpool2_fwd", (xp,), args.repeat)

    n = 600
    Xs = rng.normal(size=(n, 23))
    ys = np.where(Xs[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    sq = ((Xs[:, None, :] - Xs[None, :, :]) ** 2).sum(axis=2)
    K = np.exp(-sq / 23.0)
    ok &= compare("smo_solve", (K, ys, 10.0, 1e-3, 200000), args.repeat,
                  rtol=1e-7, atol=1e-9, pick=lambda r: (r[0], r[1]))

    Xt = rng.normal(size=(2000, 21))
    yt = rng.integers(0, 9, 2000)
    ok &= compare("best_gini_split", (Xt, yt, 9, 1), args.repeat)

    print("all kernels agree" if ok else "KERNEL MISMATCH", file=sys.stderr)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
