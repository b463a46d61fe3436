"""Compare the compiled and pure-Python kernel backends.

Times ``bernoulli_array`` and ``thomas`` on random data for a few sizes,
then one short end-to-end run per backend (each in a fresh interpreter so
the backend is selected at import). Results go to stdout as CSV.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 64 512 4096] [--repeat 5]
"""

import argparse
import csv
import os
import subprocess
import sys
import timeit

import numpy as np

from sgcorrosion._core import _pykernels

try:
    from sgcorrosion._core import _ckernels
except ImportError:
    _ckernels = None

RUN_SNIPPET = """
import time
from sgcorrosion import mesh, timeloop as T, params as P
import sgcorrosion._core as c
cfg = T.RunConfig(P.TABLE1, mesh.uniform({cells}), T.SolverOptions(dt=1e-4), {t_final})
t = time.perf_counter()
T.run(cfg)
print(c.BACKEND, time.perf_counter() - t)
"""


def kernel_data(n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-40, 40, n)
    sub, sup = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    diag = 2.5 + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    return x, (sub, diag, sup, rhs)


def best_time(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernels(sizes, repeat):
    rows = []
    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    for n in sizes:
        x, tri = kernel_data(n)
        number = max(1, 20000 // n)
        for name, mod in backends:
            tb = best_time(lambda: mod.bernoulli_array(x), repeat, number)
            tt = best_time(lambda: mod.thomas(*tri), repeat, number)
            rows.append(("bernoulli_array", n, name, tb))
            rows.append(("thomas", n, name, tt))
    return rows


def bench_run(cells, t_final):
    rows = []
    for pure in ("1", "0"):
        env = dict(os.environ, SGCORROSION_PURE=pure)
        out = subprocess.run([sys.executable, "-c", RUN_SNIPPET.format(cells=cells,
                                                                    t_final=t_final)],
                             env=env, check=True, capture_output=True, text=True).stdout
        backend, seconds = out.split()
        rows.append(("run", cells, backend, float(seconds)))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 512, 4096])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--run-cells", type=int, default=256)
    ap.add_argument("--run-time", type=float, default=1e-3)
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("# compiled extension not built; timing the fallback only", file=sys.stderr)
    rows = bench_kernels(args.sizes, args.repeat)
    rows += bench_run(args.run_cells, args.run_time)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("kernel", "size", "backend", "seconds"))
    for r in rows:
        w.writerow(r[:3] + (f"{r[3]:.3e}",))
    ref = {(k, n): t for k, n, b, t in rows if b == "python"}
    for k, n, b, t in rows:
        if b == "cython" and (k, n) in ref:
            print(f"# {k:16s} n={n:<6d} speedup {ref[k, n] / t:6.1f}x", file=sys.stderr)


if __name__ == "__main__":
    main()
