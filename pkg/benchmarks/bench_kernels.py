"""Compiled core against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times each hot kernel on both backends, checks that the outputs agree
and prints the speed-up. End-to-end rows time a full simulation with
``DYNBRIDGE_PURE`` toggled in a subprocess.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dynbridge._core import _fallback

try:
    from dynbridge._core import _kernels
except ImportError:
    _kernels = None


def _cases():
    rng = np.random.default_rng(0)
    n_p, n_nodes = 2000, 1025
    t = np.linspace(0.0, 0.999, n_nodes)
    u = rng.standard_normal((n_p, n_nodes)).cumsum(axis=1) * 0.03
    dB = rng.standard_normal((n_p, n_nodes - 1)) * np.sqrt(np.diff(t))
    tau = 1.5 - t
    r0 = np.zeros(n_nodes)
    ru = 1.0 / tau
    rr = -1.0 / tau
    ids = np.arange(n_p, dtype=np.int64)
    n = 20001
    lower = np.full(n - 1, -0.3)
    upper = np.full(n - 1, -0.3)
    diag = np.full(n, 1.6)
    rhs = rng.standard_normal(n)
    w = rng.random(100000)
    w /= w.sum()
    return {
        "normals 2000x1024": lambda m: m.normals(7, ids, np.arange(1024), 1),
        "bridge_affine 2000x1024": lambda m: m.bridge_affine(
            np.zeros(n_p), u, t, r0, ru, rr, dB, 7, ids, 1, 5.0, 4)[0],
        "thomas n=20001": lambda m: m.thomas(lower, diag, upper, rhs),
        "systematic_resample n=1e5": lambda m: m.systematic_resample(w, 0.37),
    }


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _end_to_end(pure, repeat):
    code = ("import time; from dynbridge import *; m = make_model({'kind': 'constant', "
            "'value': 0.5 ** 0.5}, 0.5); g = TimeGrid.default(4096); "
            "t0 = time.perf_counter(); simulate_bridge(m, None, g, 5000, 1); "
            "print(time.perf_counter() - t0)")
    env = dict(os.environ, DYNBRIDGE_PURE="1" if pure else "0")
    best = float("inf")
    for _ in range(max(1, repeat // 2)):
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        best = min(best, float(out.stdout.strip().splitlines()[-1]))
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled core not built; only the fallback can be timed")
    rows = []
    for name, call in _cases().items():
        tp = _time(lambda: call(_fallback), args.repeat)
        if _kernels is not None:
            tc = _time(lambda: call(_kernels), args.repeat)
            same = np.array_equal(call(_fallback), call(_kernels))
            close = same or np.allclose(call(_fallback), call(_kernels), rtol=1e-12, atol=1e-14)
        else:
            tc, same, close = float("nan"), False, False
        rows.append({"kernel": name, "python_s": tp, "cython_s": tc,
                     "speedup": tp / tc, "bitwise_equal": bool(same), "close": bool(close)})
    if not args.skip_end_to_end and _kernels is not None:
        tp, tc = _end_to_end(True, args.repeat), _end_to_end(False, args.repeat)
        rows.append({"kernel": "simulate_bridge N=5000 steps=4096", "python_s": tp,
                     "cython_s": tc, "speedup": tp / tc, "bitwise_equal": None, "close": None})
    print(f"{'kernel':36s} {'python [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s}  agree")
    for r in rows:
        agree = "-" if r["close"] is None else ("bitwise" if r["bitwise_equal"]
                                                 else ("1e-12" if r["close"] else "NO"))
        print(f"{r['kernel']:36s} {r['python_s']:11.4f} {r['cython_s']:11.4f} "
              f"{r['speedup']:9.1f}  {agree}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["close"] in (True, None) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
