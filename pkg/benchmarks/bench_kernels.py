"""Compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Times ``basis_matrix`` and ``local_linear`` from both backends on the same
inputs, checks that they agree, and with ``--end-to-end`` also times one
two-stage replication in a subprocess with ``ARGMAX_BAYES_PURE`` unset and set.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from argmax_bayes import _fallback
from argmax_bayes.basis import make_uniform_knots

try:
    from argmax_bayes import _kernels
except ImportError:  # extension not built
    _kernels = None

E2E = ("from argmax_bayes.experiments import ExperimentSpec, run_two_stage_bayes, "
       "run_two_stage_freq; s = ExperimentSpec(); run_two_stage_bayes(s, 0); "
       "run_two_stage_freq(s, 0)")


def cases(rng):
    kv = make_uniform_knots(4, 16)
    x = rng.uniform(size=20_000)
    basis_args = (kv.knots, kv.order, x)

    n, m, k = 900, 2000, 90
    X = rng.uniform(size=(n, 2))
    Y = np.sin(4 * X[:, 0]) + rng.normal(scale=0.1, size=n)
    P = rng.uniform(size=(m, 2))
    d = np.linalg.norm(P[:, None, :] - X[None, :, :], axis=2)
    idx = np.argsort(d, axis=1)[:, :k].astype(np.int64)
    h = np.take_along_axis(d, idx[:, -1:], axis=1)[:, 0]
    loess_args = (X, Y, P, idx, h)
    return {"basis_matrix (20000 pts, J=20)": ("basis_matrix", basis_args),
            "local_linear (2000 fits, k=90)": ("local_linear", loess_args)}


def best_time(fun, args, repeat):
    return min(timeit.repeat(lambda: fun(*args), number=1, repeat=repeat))


def end_to_end(repeat):
    out = {}
    for label, pure in (("compiled", "0"), ("pure", "1")):
        env = dict(os.environ, ARGMAX_BAYES_PURE=pure)
        code = f"import timeit; print(min(timeit.repeat({E2E!r}, number=1, repeat={repeat})))"
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        out[label] = float(res.stdout.strip())
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'compiled [ms]':>14s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for label, (name, call_args) in cases(rng).items():
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        a, b = fast(*call_args), slow(*call_args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-12)
        tf = best_time(fast, call_args, args.repeat)
        ts = best_time(slow, call_args, args.repeat)
        print(f"{label:34s} {1e3 * tf:14.2f} {1e3 * ts:12.2f} {ts / tf:7.1f}x")
    if args.end_to_end:
        t = end_to_end(max(1, args.repeat // 2))
        print(f"{'two-stage + baseline replication':34s} {1e3 * t['compiled']:14.0f} "
              f"{1e3 * t['pure']:12.0f} {t['pure'] / t['compiled']:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
