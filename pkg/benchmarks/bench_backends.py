"""Time the numba kernels against the pure-numpy fallback.

Run as a script:  python3 benchmarks/bench_backends.py [--repeats N]

Each kernel is timed on a workload shaped like real package use
(filtration grams on training batches, the batched RK4 stable-state
sweep).  Jitted functions are called once before timing so compilation
is not billed to the benchmark.
"""

import argparse
import time

import numpy as np

from endokit import backend


def _time(fn, args, repeats):
    fn(*args)  # warm up (and JIT-compile on the numba path)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def benchmark(repeats=5):
    rng = np.random.default_rng(0)
    impls = backend.available_backends()

    a = rng.normal(size=(400, 64))
    b = rng.normal(size=(300, 64))
    boundaries = np.array([0, 16, 32, 48, 64], dtype=np.int64)

    psi = rng.normal(size=(128, 16))
    anchors_half = np.ascontiguousarray(rng.normal(size=(97, 20, 16)))
    coeffs_half = np.ascontiguousarray(rng.normal(size=(97, 20, 16)) * 0.1)

    workloads = [
        ("pairwise_sq_dists", (a, b)),
        ("rbf_gram", (a, b, 0.5)),
        ("prefix_rbf_grams", (a, b, boundaries, 0.5)),
        ("ckm_forward", (psi, anchors_half, coeffs_half, 1.0, 1.0 / 48)),
    ]

    rows = []
    for name, args in workloads:
        entry = {"kernel": name}
        for impl_name, impl in sorted(impls.items()):
            entry[impl_name] = _time(impl[name], args, repeats)
        if "numba" in entry and "numpy" in entry:
            entry["speedup"] = entry["numpy"] / entry["numba"]
        rows.append(entry)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rows = benchmark(args.repeats)
    names = [k for k in rows[0] if k != "kernel"]
    header = f"{'kernel':>20s}" + "".join(f"{n:>14s}" for n in names)
    print(header)
    for row in rows:
        cells = "".join(
            f"{row[n]:>14.3f}" if n == "speedup" else f"{row[n] * 1e3:>12.3f}ms"
            for n in names if n in row)
        print(f"{row['kernel']:>20s}{cells}")


if __name__ == "__main__":
    main()
