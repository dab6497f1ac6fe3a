"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the sparse projection of a block of per-example gradients (the
inner loop of embedding) and the triangular solves used by OMP.
"""

import argparse
import timeit

import numpy as np

from gmc import _fallback
from gmc.model import ArchSpec
from gmc.projection import make_projection

try:
    from gmc import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)

    arch = ArchSpec(10, (128, 128), 5)
    D = arch.num_params
    cases = [("project 400 x %d -> 1000" % D, make_projection(D, 1000, seed=1), rng.standard_normal((400, D))),
             ("project 100 x %d -> 200" % D, make_projection(D, 200, seed=2), rng.standard_normal((100, D)))]
    rows = []
    for name, P, X in cases:
        args_ = (P.indptr, P.indices, P.signs, P.scale, X)
        t_py = best_of(lambda: _fallback.sparse_project(*args_), args.repeat)
        t_cy = best_of(lambda: _kernels.sparse_project(*args_), args.repeat) if _kernels else None
        rows.append((name, t_py, t_cy))

    for m in (100, 500):
        A = rng.standard_normal((m, m))
        L = np.ascontiguousarray(np.linalg.cholesky(A @ A.T + m * np.eye(m)))
        b = rng.standard_normal(m)
        for fn in ("solve_lower", "solve_lower_t"):
            t_py = best_of(lambda: getattr(_fallback, fn)(L, b, m), args.repeat)
            t_cy = best_of(lambda: getattr(_kernels, fn)(L, b, m), args.repeat) if _kernels else None
            rows.append((f"{fn} m={m}", t_py, t_cy))

    print(f"{'kernel':<34}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
    for name, t_py, t_cy in rows:
        cy = f"{1e3 * t_cy:13.3f}" if t_cy else f"{'-':>13}"
        sp = f"{t_py / t_cy:8.1f}x" if t_cy else f"{'-':>9}"
        print(f"{name:<34}{1e3 * t_py:12.3f}{cy}{sp}")


if __name__ == "__main__":
    main()
