"""Benchmark the jitted kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--docs N] [--dim D] [--repeat R]

The numba backend must be active (do not set DERAG_PURE_NUMPY); the numpy
fallbacks are invoked directly for comparison.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from derag import kernels


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_postings(rng, n_docs, n_terms, density):
    post_docs, post_tfs, offsets = [], [], [0]
    for _ in range(n_terms):
        docs = np.flatnonzero(rng.random(n_docs) < density)
        post_docs.extend(docs.tolist())
        post_tfs.extend(rng.integers(1, 5, size=docs.shape[0]).tolist())
        offsets.append(len(post_docs))
    return (
        np.asarray(post_docs, dtype=np.int64),
        np.asarray(post_tfs, dtype=np.float64),
        np.asarray(offsets, dtype=np.int64),
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=768)
    parser.add_argument("--pool", type=int, default=30_522)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if kernels.PURE_NUMPY:
        raise SystemExit("numba backend inactive (DERAG_PURE_NUMPY is set or numba is missing)")

    rng = np.random.default_rng(0)
    print(f"backend={kernels.BACKEND}  docs={args.docs} dim={args.dim} pool={args.pool}")
    kernels.warmup()

    rows = []

    # matvec: measured slower under numba, so production always uses BLAS;
    # kept in the benchmark as the record of that decision
    docs = np.ascontiguousarray(rng.standard_normal((args.docs, args.dim)))
    query = np.ascontiguousarray(rng.standard_normal(args.dim))
    rows.append((
        "dense_scores*",
        timeit(lambda: kernels._dense_scores_nb(query, docs), args.repeat),
        timeit(lambda: kernels._dense_scores_np(query, docs), args.repeat),
    ))

    n_terms = 2000
    post_docs, post_tfs, offsets = make_postings(rng, args.docs, n_terms, density=0.02)
    idf = rng.uniform(0.0, 3.0, size=n_terms)
    doc_lens = rng.integers(20, 300, size=args.docs).astype(np.float64)
    q_terms = rng.integers(0, n_terms, size=8).astype(np.int64)
    bm25_args = (q_terms, post_docs, post_tfs, offsets, idf, doc_lens,
                 float(doc_lens.mean()), 1.2, 0.75, args.docs)
    rows.append((
        "bm25_scores",
        timeit(lambda: kernels.bm25_scores(*bm25_args), args.repeat),
        timeit(lambda: kernels._bm25_scores_np(*bm25_args), args.repeat),
    ))

    pool = rng.standard_normal((args.pool, args.dim))
    points = rng.standard_normal((5, args.dim))
    rows.append((
        "nearest_pool_index",
        timeit(lambda: kernels.nearest_pool_index(points, pool), args.repeat),
        timeit(lambda: kernels._nearest_pool_np(points, pool), args.repeat),
    ))

    print(f"{'kernel':<20} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for name, jit_t, np_t in rows:
        print(f"{name:<20} {jit_t * 1e3:>12.3f} {np_t * 1e3:>12.3f} {np_t / jit_t:>8.2f}x")
    print("* dense_scores ships on the numpy/BLAS path in both modes")


if __name__ == "__main__":
    main()
