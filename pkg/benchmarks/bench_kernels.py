"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--fit]

Prints median wall time per call for each kernel on both backends and the
speedup. ``--fit`` also times a full surrogate fit under each backend (run in
a subprocess, since the backend is fixed at import).
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from fleetopt import _pykernels as py

try:
    from fleetopt import _ckernels as ck
except ImportError:
    ck = None


def cases(rng):
    pts, cents = rng.normal(size=(2000, 12)), rng.normal(size=(30, 12))
    x, y = rng.uniform(size=(60, 4)), rng.normal(size=60)
    ls = np.array([0.3, 0.5, 0.8, 1.2])
    w = rng.normal(size=(60, 60))
    mean, std = rng.normal(size=1024), rng.uniform(0.1, 1.0, 1024)
    z = rng.normal(size=1024)
    return {
        "sq_dists 2000x30x12": ("sq_dists", (pts, cents)),
        "assign_nearest 2000x30x12": ("assign_nearest", (pts, cents)),
        "matern52 60x1024x4": ("matern52", (x, rng.uniform(size=(1024, 4)), ls, 1.3)),
        "gp_nlml n=60 d=4": ("gp_nlml", (x, y, ls, 1.3, 1e-3)),
        "matern52_ls_grad n=60 d=4": ("matern52_ls_grad", (x, ls, 1.3, w)),
        "mc_ei 1024 cand x 1024 draws": ("mc_expected_improvement", (mean, std, z, 0.2)),
    }


def median_time(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return statistics.median(times)


FIT_SNIPPET = """
import time, numpy as np
from fleetopt.bayesopt import fit_surrogate
from fleetopt.core import Configuration, Continuous, Dim, HyperparameterSpace
from fleetopt.objective import AggregateResult
space = HyperparameterSpace(tuple(Dim(n, Continuous(0.0, 1.0)) for n in "ab"))
rng = np.random.default_rng(0)
x = rng.uniform(size=(60, 2))
y = 0.015 - 0.4 * ((x - 0.5) ** 2).sum(1)
trials = [(Configuration(tuple(r)), AggregateResult(float(v), 0.0, True, 5e-4, 0.1)) for r, v in zip(x, y)]
t = time.perf_counter()
fit_surrogate(trials, space, seed=1)
print(time.perf_counter() - t)
"""


def fit_time(pure: bool) -> float:
    env = dict(os.environ)
    env.pop("FLEETOPT_PURE_PYTHON", None)
    if pure:
        env["FLEETOPT_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--fit", action="store_true", help="also time a full GP fit per backend")
    args = parser.parse_args(argv)

    if ck is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python':>11s} {'cython':>11s} {'speedup':>8s}")
    for label, (name, call_args) in cases(rng).items():
        t_py = median_time(getattr(py, name), call_args, args.repeat)
        if ck is None:
            print(f"{label:32s} {t_py * 1e3:9.3f}ms {'-':>11s} {'-':>8s}")
            continue
        t_c = median_time(getattr(ck, name), call_args, args.repeat)
        print(f"{label:32s} {t_py * 1e3:9.3f}ms {t_c * 1e3:9.3f}ms {t_py / t_c:7.2f}x")

    if args.fit:
        t_py = fit_time(pure=True)
        line = f"{'fit_surrogate n=60 d=2':32s} {t_py * 1e3:9.1f}ms"
        if ck is not None:
            t_c = fit_time(pure=False)
            line += f" {t_c * 1e3:9.1f}ms {t_py / t_c:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
