"""Compare the numba kernels with the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--nodes 2000 20000] [--dim 64] [--repeat 20]

Prints one row per (kernel, size): best-of-repeat wall time per call for each
backend, the speedup, and the max abs difference between the two outputs.
The first numba call (JIT compile or cache load) is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from gdn import _kernels
from gdn.synth import SynthSpec, generate


def _cases(g, dim, rng):
    adj = g.merged_adjacency()
    h = rng.standard_normal((g.n_nodes, dim))
    return {
        "neighbor_mean": (_kernels.neighbor_mean, (adj.indptr, adj.indices, h)),
        "neighbor_mean_adjoint": (_kernels.neighbor_mean_adjoint, (adj.indptr, adj.indices, h)),
        "same_label_counts": (_kernels.same_label_counts, (adj.indptr, adj.indices, g.labels)),
    }


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[2000, 20000])
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--degree", type=float, default=10.0)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    if not _kernels.HAS_NUMBA:
        print("numba unavailable (or GDN_DISABLE_NUMBA set); timing the numpy path only")
    rng = np.random.default_rng(0)
    header = f"{'kernel':<24}{'nodes':>8}{'edges':>9}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}{'max|diff|':>12}"
    print(header)
    print("-" * len(header))
    for n in args.nodes:
        g = generate(SynthSpec(n_nodes=n, mean_degree=args.degree, n_relations=1, seed=0))
        for name, (fn, call_args) in _cases(g, args.dim, rng).items():
            ref = fn(*call_args, use_numba=False)
            t_np = min(timeit.repeat(lambda: fn(*call_args, use_numba=False), number=1, repeat=args.repeat))
            if _kernels.HAS_NUMBA:
                out = fn(*call_args, use_numba=True)  # warm-up
                t_nb = min(timeit.repeat(lambda: fn(*call_args, use_numba=True), number=1, repeat=args.repeat))
                cols = f"{t_nb * 1e3:>11.3f}{t_np / t_nb:>8.1f}x{_maxdiff(ref, out):>12.2e}"
            else:
                cols = f"{'-':>11}{'-':>9}{'-':>12}"
            edges = g.merged_adjacency().n_edges
            print(f"{name:<24}{n:>8}{edges:>9}{t_np * 1e3:>11.3f}{cols}")


if __name__ == "__main__":
    main()
