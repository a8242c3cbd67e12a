"""Numba vs numpy kernel timings.

Each backend runs in its own interpreter, because the choice is fixed at
import time through ``LCGALERKIN_BACKEND``. The child prints one JSON line
of timings plus checksums, and the parent prints a comparison table and
checks that both backends agree.

    python3 benchmarks/bench_kernels.py [--points 4096 32768] [--repeat 20]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def child(points, repeat, steps):
    from lcgalerkin import tensor as tn
    from lcgalerkin._backend import active_backend
    from lcgalerkin.experiments.config import default_config
    from lcgalerkin.solver import Stepper, build_initial_state

    rng = np.random.default_rng(7)
    out = {"backend": active_backend(), "kernels": {}, "checksums": {}}
    for npts in points:
        q = rng.normal(size=(5, npts))
        b = rng.normal(size=(5, npts))
        lap = rng.normal(size=(5, npts))
        gq = rng.normal(size=(2, 5, npts))
        g = rng.normal(size=(3, 3, npts))
        c = rng.uniform(0.5, 1.5, size=npts)
        runs = {
            "q_local_rhs": lambda: tn.q_local_rhs(q, g, c, 1.0, 1.0, 0.5),
            "stress": lambda: tn.stress_kernel(q, lap, gq, c, 1.0, 0.3),
            "cancellation": lambda: tn.cancellation_kernel(q, b, g),
        }
        for name, fn in runs.items():
            out["kernels"][f"{name}@{npts}"] = _best(fn, repeat)
        out["checksums"][f"q_local_rhs@{npts}"] = float(np.sum(runs["q_local_rhs"]()[0]))
        out["checksums"][f"stress@{npts}"] = float(np.sum(runs["stress"]()))
        out["checksums"][f"cancellation@{npts}"] = float(np.sum(runs["cancellation"]()[0]))

    cfg = default_config()
    stp = Stepper(cfg.make_grid(), cfg.params)
    st, _ = build_initial_state(stp, cfg.initial)
    st, _ = stp.step(st)
    t0 = time.perf_counter()
    for _ in range(steps):
        st, _ = stp.step(st)
    out["kernels"]["full_step"] = (time.perf_counter() - t0) / steps
    out["checksums"]["full_step"] = float(np.sum(st.u))
    print(json.dumps(out))


def run_backend(backend, args):
    env = dict(os.environ, LCGALERKIN_BACKEND=backend)
    cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat), "--steps", str(args.steps),
           "--points", *map(str, args.points)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[4096, 32768])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        child(args.points, args.repeat, args.steps)
        return 0
    fast = run_backend("numba", args)
    slow = run_backend("numpy", args)
    if fast["backend"] != "numba":
        print("numba unavailable; both runs used numpy")
    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for key in fast["kernels"]:
        a, b = fast["kernels"][key] * 1e3, slow["kernels"][key] * 1e3
        print(f"{key:<22}{a:>12.3f}{b:>12.3f}{b / a:>10.2f}")
    worst = 0.0
    for key, a in fast["checksums"].items():
        b = slow["checksums"][key]
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    print(f"largest relative checksum gap: {worst:.2e}")
    return 0 if worst < 1e-9 else 1


if __name__ == "__main__":
    sys.exit(main())
