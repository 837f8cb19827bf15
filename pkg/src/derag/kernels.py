"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Backend selection: setting ``DERAG_PURE_NUMPY=1`` in the environment forces
the numpy path; otherwise numba is used when importable.  Both paths share
accumulation order where exactness matters (BM25), so results agree to float
rounding.  ``benchmarks/bench_kernels.py`` compares the two; the dense
matvec stays on BLAS in both modes because the jitted loop measured slower.
"""

from __future__ import annotations

import os

import numpy as np

PURE_NUMPY = os.environ.get("DERAG_PURE_NUMPY", "").strip() in {"1", "true", "yes"}

if not PURE_NUMPY:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        PURE_NUMPY = True

BACKEND = "numpy" if PURE_NUMPY else "numba"


# -- pure-numpy implementations ------------------------------------------------


def _dense_scores_np(query: np.ndarray, docs: np.ndarray) -> np.ndarray:
    return docs @ query


def _bm25_scores_np(
    query_terms: np.ndarray,
    post_docs: np.ndarray,
    post_tfs: np.ndarray,
    offsets: np.ndarray,
    idf: np.ndarray,
    doc_lens: np.ndarray,
    avgdl: float,
    k1: float,
    b: float,
    n_docs: int,
) -> np.ndarray:
    scores = np.zeros(n_docs, dtype=np.float64)
    # term-major accumulation, same order as the jitted loop
    for t in query_terms:
        lo, hi = offsets[t], offsets[t + 1]
        docs = post_docs[lo:hi]
        tf = post_tfs[lo:hi]
        denom = tf + k1 * (1.0 - b + b * doc_lens[docs] / avgdl)
        np.add.at(scores, docs, idf[t] * tf * (k1 + 1.0) / denom)
    return scores


def _nearest_pool_np(points: np.ndarray, pool: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0], dtype=np.int64)
    for i in range(points.shape[0]):
        diff = pool - points[i]
        out[i] = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
    return out


# -- numba implementations -----------------------------------------------------

if not PURE_NUMPY:

    @njit(cache=True)
    def _dense_scores_nb(query, docs):
        n, d = docs.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += docs[i, j] * query[j]
            out[i] = s
        return out

    @njit(cache=True)
    def _bm25_scores_nb(
        query_terms, post_docs, post_tfs, offsets, idf, doc_lens, avgdl, k1, b, n_docs
    ):
        scores = np.zeros(n_docs, dtype=np.float64)
        for qi in range(query_terms.shape[0]):
            t = query_terms[qi]
            w = idf[t] * (k1 + 1.0)
            for p in range(offsets[t], offsets[t + 1]):
                d = post_docs[p]
                tf = post_tfs[p]
                denom = tf + k1 * (1.0 - b + b * doc_lens[d] / avgdl)
                scores[d] += w * tf / denom
        return scores

    @njit(cache=True)
    def _nearest_pool_nb(points, pool):
        n, dim = points.shape
        m = pool.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            best = np.inf
            best_j = 0
            for j in range(m):
                dist = 0.0
                for k in range(dim):
                    diff = pool[j, k] - points[i, k]
                    dist += diff * diff
                if dist < best:
                    best = dist
                    best_j = j
            out[i] = best_j
        return out


# -- public surface --------------------------------------------------------------


def dense_scores(query: np.ndarray, docs: np.ndarray) -> np.ndarray:
    """Dot products of ``query`` (d,) against every row of ``docs`` (n, d).

    Always the BLAS path: identical results under either backend flag.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    docs = np.ascontiguousarray(docs, dtype=np.float64)
    return _dense_scores_np(query, docs)


def bm25_scores(
    query_terms: np.ndarray,
    post_docs: np.ndarray,
    post_tfs: np.ndarray,
    offsets: np.ndarray,
    idf: np.ndarray,
    doc_lens: np.ndarray,
    avgdl: float,
    k1: float,
    b: float,
    n_docs: int,
) -> np.ndarray:
    """BM25 scores for every document, accumulated over inverted-index postings.

    ``query_terms`` holds in-vocabulary term ids (repeats allowed, each
    occurrence contributes).  Postings are CSR-style: term ``t`` owns
    ``post_docs[offsets[t]:offsets[t+1]]`` with matching term frequencies.
    """
    query_terms = np.asarray(query_terms, dtype=np.int64)
    if PURE_NUMPY:
        return _bm25_scores_np(
            query_terms, post_docs, post_tfs, offsets, idf, doc_lens, avgdl, k1, b, n_docs
        )
    return _bm25_scores_nb(
        query_terms, post_docs, post_tfs, offsets, idf, doc_lens, avgdl, k1, b, n_docs
    )


def nearest_pool_index(points: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Index of the L2-nearest pool row for each point; ties take the lowest index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    pool = np.ascontiguousarray(pool, dtype=np.float64)
    if PURE_NUMPY:
        return _nearest_pool_np(points, pool)
    return _nearest_pool_nb(points, pool)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    dense_scores(np.zeros(2), np.zeros((2, 2)))
    bm25_scores(
        np.zeros(1, dtype=np.int64),
        np.zeros(1, dtype=np.int64),
        np.ones(1),
        np.array([0, 1], dtype=np.int64),
        np.ones(1),
        np.ones(1),
        1.0,
        1.2,
        0.75,
        1,
    )
    nearest_pool_index(np.zeros((1, 2)), np.zeros((2, 2)))
