"""Compare the compiled Jacobi kernel against the pure Python fallback.

Runs the same rotation sweeps on identical inputs and reports wall time
per decomposition plus the speedup factor.  Usage:

    python benchmarks/bench_svd.py [--sizes 16,32,64,96] [--repeats 5]
"""

import argparse
import time

import numpy as np

from equilab._kernels import jacobi_py

try:
    from equilab._kernels import _jacobi as compiled
except ImportError:
    compiled = None

from equilab import densela


def time_kernel(kernel, a, repeats):
    m, n = a.shape
    best = float("inf")
    sweeps = converged = None
    for _ in range(repeats):
        bt = np.ascontiguousarray(a.T.copy())
        vt = np.eye(n)
        t0 = time.perf_counter()
        sweeps, converged = kernel.jacobi_sweeps(
            bt, vt, densela._REL_TOL_FLOOR, 1e-14 * float(np.sum(a * a)), 60)
        best = min(best, time.perf_counter() - t0)
    return best, sweeps, converged


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="16,32,64,96")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    print(f"{'size':>6} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for n in sizes:
        a = rng.standard_normal((n, n))
        t_py, sweeps, ok = time_kernel(jacobi_py, a, args.repeats)
        if compiled is None:
            print(f"{n:>6} {t_py * 1e3:>10.2f}ms {'n/a':>12} {'n/a':>9}")
            continue
        t_c, sweeps_c, ok_c = time_kernel(compiled, a, args.repeats)
        assert (sweeps, ok) == (sweeps_c, ok_c), "backends disagree on sweep count"
        print(f"{n:>6} {t_py * 1e3:>10.2f}ms {t_c * 1e3:>10.2f}ms {t_py / t_c:>8.1f}x")
    if compiled is None:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
