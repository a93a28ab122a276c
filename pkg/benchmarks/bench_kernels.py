"""Compare the compiled and pure-NumPy recurrent kernels.

Runs the LSTM forward and backward passes at a few batch/length/width
shapes, checks that both backends agree numerically, and prints a timing
table.  Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from scoredeck import kernels

SHAPES = (
    # (batch, timesteps, hidden units per direction)
    (16, 50, 8),
    (16, 200, 16),
    (32, 400, 32),
)


def _run_once(fwd, bwd, xp, Wh, dH):
    H, C, G, TC = fwd(xp, Wh)
    dXp, dWh = bwd(dH, Wh, H, C, G, TC)
    return H, dXp, dWh


def _time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    try:
        cy_fwd, cy_bwd = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; benchmarking the reference only")
        cy_fwd = cy_bwd = None
    py_fwd, py_bwd = kernels.get_backend("python")

    print(f"active backend: {kernels.BACKEND}")
    header = f"{'shape (B,T,b)':<16} {'python':>10} {'cython':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))

    for B, T, b in SHAPES:
        rng = np.random.default_rng(B * 1000 + T + b)
        xp = rng.normal(scale=0.5, size=(B, T, 4 * b))
        Wh = rng.normal(scale=0.3, size=(b, 4 * b))
        dH = rng.normal(size=(B, T, b))

        py_out = _run_once(py_fwd, py_bwd, xp, Wh, dH)
        py_t = _time(lambda: _run_once(py_fwd, py_bwd, xp, Wh, dH), args.repeats)

        if cy_fwd is None:
            print(f"({B},{T},{b})".ljust(16) + f" {py_t * 1e3:9.1f}ms {'-':>10} {'-':>8}")
            continue

        cy_out = _run_once(cy_fwd, cy_bwd, xp, Wh, dH)
        for a, c in zip(py_out, cy_out):
            err = np.max(np.abs(a - c))
            if err > 1e-9:
                raise AssertionError(f"backend disagreement {err:.2e} at ({B},{T},{b})")
        cy_t = _time(lambda: _run_once(cy_fwd, cy_bwd, xp, Wh, dH), args.repeats)

        print(
            f"({B},{T},{b})".ljust(16)
            + f" {py_t * 1e3:9.1f}ms {cy_t * 1e3:9.1f}ms {py_t / cy_t:7.1f}x"
        )


if __name__ == "__main__":
    main()
