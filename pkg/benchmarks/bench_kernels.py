"""Compiled kernels against their pure-Python twins.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both modules directly in one process. ``--end-to-end``
also times ``pmpkit solve`` in subprocesses with and without
``PMPKIT_PURE_PYTHON=1``.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit

import numpy as np

from pmpkit import _kernels_py

try:
    from pmpkit import _kernels as compiled
except ImportError:
    sys.exit("compiled kernels not built; run `pip install --no-build-isolation -e .` first")


def oscillator(t, y):
    return np.array([y[1], -y[0]])


def workloads(backend):
    """Name and zero-argument callable for each kernel case."""
    y0 = np.array([1.0, 0.0])
    ts, ys, ks, _, _ = backend.dopri5(oscillator, 0.0, 20.0, y0, 1e-10, 1e-12, None, 100000, None)
    tq = np.linspace(0.0, 20.0, 5000)
    rng = np.random.default_rng(0)
    tt = np.linspace(0.0, 1.0, 20001)
    hh = np.ascontiguousarray(rng.normal(size=(tt.size, 3)))
    inside = (rng.random(tt.size - 1) < 0.5).astype(np.uint8)
    return {
        "dopri5 oscillator (T=20, rtol 1e-10)":
            lambda: backend.dopri5(oscillator, 0.0, 20.0, y0, 1e-10, 1e-12, None, 100000, None),
        f"dense_eval ({tq.size} queries, {ts.size - 1} steps)": lambda: backend.dense_eval(ts, ys, ks, tq),
        f"chatter_sup ({tt.size} nodes, 3 components)": lambda: backend.chatter_sup(tt, hh, inside, 0.5, True),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    py, cy = workloads(_kernels_py), workloads(compiled)
    print(f"{'kernel':48s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name in py:
        tp, tc = best_of(py[name], repeat), best_of(cy[name], repeat)
        print(f"{name:48s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}")


def bench_solve(problems):
    print(f"\n{'solve':48s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name in problems:
        times = []
        for pure in ("1", "0"):
            env = dict(os.environ, PMPKIT_PURE_PYTHON=pure)
            with tempfile.TemporaryDirectory() as out:
                start = time.perf_counter()
                subprocess.run([sys.executable, "-m", "pmpkit", "solve", name, "--out", out], env=env, check=False,
                               stdout=subprocess.DEVNULL)
                times.append(time.perf_counter() - start)
        print(f"{name:48s} {times[0]:10.3f} {times[1]:10.3f} {times[0] / times[1]:8.1f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args()
    bench_kernels(args.repeat)
    if args.end_to_end:
        bench_solve(["bang1d", "double-integrator", "galerkin-heat:8"])


if __name__ == "__main__":
    main()
