"""Time the compiled and pure-Python geodesic kernels on the same workload.

    python benchmarks/bench_kernels.py --n 200 --t-end 5
"""
import argparse
import time

import numpy as np

from hodoflow.geometry import SurfaceChart
from hodoflow.kernels import available_backends


def workload(chart, n, seed):
    rng = np.random.default_rng(seed)
    lo = [0.5] * chart.dim
    hi = [2.5] * chart.dim
    x = rng.uniform(lo, hi, size=(n, chart.dim))
    w = rng.normal(size=(n, chart.dim))
    return np.concatenate([x, w], axis=1)


def run(backend, chart, Y0, t_end, tol):
    t0 = time.perf_counter()
    Y, status = backend.integrate_batch(chart.code, chart.kernel_param, Y0, 0.0, t_end,
                                        tol, tol, 1e-3, 1_000_000, 1e-14 * t_end)
    return time.perf_counter() - t0, Y, status


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200, help="geodesics per chart")
    ap.add_argument("--t-end", type=float, default=5.0)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    charts = [SurfaceChart.cone(0.25), SurfaceChart.sphere2(), SurfaceChart.sphere3()]
    print(f"{'chart':10s} " + " ".join(f"{name:>10s}" for name in backends) + "    speedup  max|diff|")
    for chart in charts:
        Y0 = workload(chart, args.n, args.seed)
        times, finals = {}, {}
        for name, mod in backends.items():
            times[name], finals[name], status = run(mod, chart, Y0, args.t_end, args.tol)
            finals[name] = np.where((status == 0)[:, None], finals[name], np.nan)
        cols = " ".join(f"{times[name]:9.3f}s" for name in backends)
        if "cython" in times:
            speed = times["python"] / times["cython"]
            diff = np.nanmax(np.abs(finals["python"] - finals["cython"]))
            print(f"{chart.kind:10s} {cols} {speed:9.1f}x  {diff:.1e}")
        else:
            print(f"{chart.kind:10s} {cols}  (compiled kernels not built)")


if __name__ == "__main__":
    main()
