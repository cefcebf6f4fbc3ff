"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from pdloss.kernels import compiled_backend, python_backend


def cases(n: int, batch: int, rng):
    Z = rng.standard_normal((n, 32))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    y = rng.integers(0, 20, size=n)
    S = Z @ Z.T
    D = 1.0 - S
    scores = rng.uniform(-0.5, 2.5, size=n * (n - 1) // 2)
    edges = np.linspace(0.0, 2.0, 51)
    yb = rng.integers(0, 8, size=batch)
    return {
        f"pair_partition n={n}": lambda k: k.pair_partition(S, y),
        f"first_hit_ranks n={n}": lambda k: k.first_hit_ranks(D, y),
        f"histogram_counts m={scores.size}": lambda k: k.histogram_counts(scores, edges),
        f"triplet_indices B={batch}": lambda k: k.triplet_indices(yb),
        f"pair_indices B={batch}": lambda k: k.pair_indices(yb),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = {"python": python_backend}
    if compiled_backend is not None:
        backends["compiled"] = compiled_backend
    else:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name, fn in cases(args.n, args.batch, rng).items():
        times = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for b, k in backends.items()}
        row = f"{name:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if len(times) == 2:
            row += f"  {times['python'] / times['compiled']:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
