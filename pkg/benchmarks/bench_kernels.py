#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Microbenchmarks run both backends in-process; the end-to-end `evaluate`
comparison re-runs this script in a subprocess with
``PRECIPEVAL_KERNEL=python`` so the fallback is selected at import, which
is how real deployments would hit it.

Usage:
    python benchmarks/bench_kernels.py [--frames N] [--rows R] [--cols C]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from precipeval import _kernels_py
from precipeval import kernels
from precipeval.grid import GridGeometry
from precipeval.harness import predict_sequence
from precipeval.metrics import MetricConfig, evaluate
from precipeval.synth import CellSpec, EventConfig, SensorConfig, degrade, generate_event

try:
    from precipeval import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(rows, cols):
    rng = np.random.default_rng(0)
    sparse = (rng.random((rows, cols)) * 3).astype(np.float32)
    sparse[sparse < 2.9] = 0.0
    dense = (rng.random((rows, cols)) * 3).astype(np.float32)
    dense[dense < 1.5] = 0.0

    backends = [("numpy", _kernels_py)]
    if _kernels is not None:
        backends.insert(0, ("cython", _kernels))

    print(f"\nper-frame kernels on {rows}x{cols} (best of 5, ms)")
    header = f"{'kernel':<36}" + "".join(f"{name:>12}" for name, _ in backends)
    print(header)
    print("-" * len(header))
    for label, values in (("sparse (3% wet)", sparse), ("dense (50% wet)", dense)):
        row = {}
        for name, impl in backends:
            ws = kernels.make_workspace(rows, cols)
            row[name] = _time(lambda: impl.label_grid(values, 1.0, 8, ws)) * 1000
        print(f"{'label_grid ' + label:<36}" + "".join(f"{row[n]:>12.2f}" for n, _ in backends))

        labels, n = kernels.label_grid(values, 1.0, 8)
        row = {}
        for name, impl in backends:
            row[name] = _time(lambda: impl.component_moments(labels, values, n)) * 1000
        print(
            f"{'component_moments ' + label:<36}"
            + "".join(f"{row[n]:>12.2f}" for n, _ in backends)
        )

    bits = sparse.ravel().view(np.uint32)
    counts = np.zeros(65536, dtype=np.int64)
    row = {}
    for name, impl in backends:
        def run(impl=impl):
            counts.fill(0)
            impl.radix_count(bits, 16, 0, counts)
        row[name] = _time(run) * 1000
    print(f"{'radix_count':<36}" + "".join(f"{row[n]:>12.2f}" for n, _ in backends))


def month_pair(frames, rows, cols):
    geometry = GridGeometry(rows=rows, cols=cols, pixel_size_km=4.0)
    extent_x = (cols - 1) * 4.0
    extent_y = (rows - 1) * 4.0
    cell = CellSpec(
        birth_time=0.0,
        death_time=float(frames),
        peak_rate=30.0,
        center0_km=(extent_x / 2, extent_y / 2),
        velocity_kmh=(2.0, 1.0),
        sigma_major_km=min(extent_x, extent_y) / 8,
        sigma_minor_km=min(extent_x, extent_y) / 16,
        rotation_rate_radh=0.02,
    )
    hr, _ = generate_event(EventConfig(geometry=geometry, n_frames=frames, cells=(cell,)), seed=0)
    lr = degrade(hr, SensorConfig(), factor=3)
    return predict_sequence("nearest", lr, hr.geometry), hr


def bench_evaluate(frames, rows, cols, workers):
    pred, obs = month_pair(frames, rows, cols)
    t0 = time.perf_counter()
    evaluate(pred, obs, MetricConfig(), workers=workers)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=120)
    parser.add_argument("--rows", type=int, default=624)
    parser.add_argument("--cols", type=int, default=999)
    parser.add_argument("--workers", type=int, default=max(1, (os.cpu_count() or 2) // 1))
    parser.add_argument("--evaluate-only", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.evaluate_only:
        elapsed = bench_evaluate(args.frames, args.rows, args.cols, args.workers)
        print(f"EVALUATE_SECONDS {elapsed:.3f}")
        return

    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.rows, args.cols)

    print(f"\nevaluate end-to-end: {args.frames} frames at {args.rows}x{args.cols}, "
          f"workers={args.workers}")
    here = bench_evaluate(args.frames, args.rows, args.cols, args.workers)
    print(f"{kernels.BACKEND:>8}: {here:.2f}s")
    if kernels.BACKEND == "cython":
        env = dict(os.environ, PRECIPEVAL_KERNEL="python")
        cmd = [
            sys.executable, os.path.abspath(__file__), "--evaluate-only",
            "--frames", str(args.frames), "--rows", str(args.rows),
            "--cols", str(args.cols), "--workers", str(args.workers),
        ]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        for line in out.stdout.splitlines():
            if line.startswith("EVALUATE_SECONDS"):
                fallback = float(line.split()[1])
                print(f"{'numpy':>8}: {fallback:.2f}s   (x{fallback / here:.2f} vs compiled)")


if __name__ == "__main__":
    main()
