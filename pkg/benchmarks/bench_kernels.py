"""Compare the compiled and pure-Python k-d tree kernels.

    python3 benchmarks/bench_kernels.py [--points 5000] [--queries 5000] [--repeat 5]

Also times one full registration with each backend, since nearest-neighbour
queries dominate an iteration.
"""
import argparse
import time

import numpy as np

from hsaicp.bench import generate_pair, n_cut_for_overlap, perturb, random_perturbation, sample_surface
from hsaicp.nnsearch import BACKENDS, KDTree
from hsaicp import nnsearch, pipeline


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=5000)
    ap.add_argument("--queries", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cloud = sample_surface(args.points, seed=0)
    queries = cloud[rng.integers(0, len(cloud), args.queries)] + rng.normal(scale=0.01, size=(args.queries, 3))
    pair = generate_pair(cloud, n_cut_for_overlap(len(cloud), 0.7), rng_seed=1)
    init = perturb(pair.ground_truth, random_perturbation(5.0, 1.0, pair.d, 2))

    print(f"{'backend':>9} {'build ms':>9} {'query ms':>9} {'us/query':>9} {'register ms':>12}")
    rows = {}
    for name in sorted(BACKENDS):
        build = best_of(lambda: KDTree(cloud, backend=name), args.repeat)
        tree = KDTree(cloud, backend=name)
        query = best_of(lambda: tree.query(queries), args.repeat)
        saved = nnsearch.DEFAULT_BACKEND
        nnsearch.DEFAULT_BACKEND = name
        try:
            reg = best_of(lambda: pipeline.register(pair.data, pair.model, init), 1)
        finally:
            nnsearch.DEFAULT_BACKEND = saved
        rows[name] = query
        print(f"{name:>9} {build * 1e3:9.2f} {query * 1e3:9.2f} {query / args.queries * 1e6:9.2f} {reg * 1e3:12.1f}")
    if len(rows) == 2:
        print(f"compiled speed-up on queries: {rows['python'] / rows['compiled']:.1f}x")


if __name__ == "__main__":
    main()
