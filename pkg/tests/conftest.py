"""Shared fixtures: synthetic worlds small enough to brute-force."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from derag import kernels
from derag.io import Corpus, Document, Query, TokenTable, save_embedding_matrix, save_token_table


def make_token_table(n_tokens: int, dim: int, seed: int = 0, n_special: int = 0,
                     scale: float = 1.0) -> TokenTable:
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n_tokens, dim)).astype(np.float32) * scale
    surfaces = [f"tok{i}" for i in range(n_tokens)]
    specials = range(n_special)
    return TokenTable(emb, surfaces, specials)


def make_dense_corpus(n_docs: int, dim: int, seed: int = 0) -> Corpus:
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n_docs):
        vec = rng.standard_normal(dim).astype(np.float32)
        docs.append(Document(doc_id=f"d{i:04d}", text=f"document {i}", embedding=vec,
                             term_freqs={"document": 1, str(i): 1}, length=2))
    return Corpus(docs)


def make_query(dim: int, seed: int = 0, query_id: str = "q0") -> Query:
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return Query(query_id=query_id, text=f"query {query_id}", embedding=vec / np.linalg.norm(vec))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def write_dense_world(root: Path, n_docs=40, dim=8, n_queries=4, pool=12, n_special=2, seed=0):
    """On-disk dense fixture: corpus + embeddings + queries + token table.

    Token embeddings share a common norm so the nearest-token projection can
    reach all of them; the first searchable token is aligned with each run's
    likely targets only by chance, which is enough for CLI smoke tests.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    doc_ids = [f"d{i:04d}" for i in range(n_docs)]
    write_jsonl(root / "corpus.jsonl", [{"doc_id": d, "text": f"document body {d}"} for d in doc_ids])
    doc_mat = rng.standard_normal((n_docs, dim)).astype(np.float32)
    save_embedding_matrix(root / "docs.emb", doc_mat, doc_ids)

    query_ids = [f"q{i:02d}" for i in range(n_queries)]
    write_jsonl(root / "queries.jsonl", [{"query_id": q, "text": f"question text {q}"} for q in query_ids])
    q_mat = rng.standard_normal((n_queries, dim)).astype(np.float32)
    save_embedding_matrix(root / "queries.emb", q_mat, query_ids)

    emb = rng.standard_normal((pool, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    emb *= 2.0
    surfaces = [f"tok{i}" for i in range(pool)]
    save_token_table(root / "vocab.emb", emb.astype(np.float32), surfaces, special_ids=range(n_special))
    return {
        "corpus": str(root / "corpus.jsonl"),
        "doc_embeddings": str(root / "docs.emb"),
        "queries": str(root / "queries.jsonl"),
        "query_embeddings": str(root / "queries.emb"),
        "token_table": str(root / "vocab.emb"),
    }


def write_text_world(root: Path, n_docs=60, n_queries=4, vocab_words=40, doc_len=10,
                     emb_dim=8, seed=0):
    """On-disk BM25 fixture: word-salad corpus and a token table over its vocabulary."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    words = [f"word{i:02d}" for i in range(vocab_words)]
    doc_ids = [f"d{i:04d}" for i in range(n_docs)]
    rows = []
    for d in doc_ids:
        text = " ".join(rng.choice(words, size=doc_len))
        rows.append({"doc_id": d, "text": text})
    write_jsonl(root / "corpus.jsonl", rows)

    query_ids = [f"q{i:02d}" for i in range(n_queries)]
    write_jsonl(
        root / "queries.jsonl",
        [{"query_id": q, "text": " ".join(rng.choice(words, size=4))} for q in query_ids],
    )

    emb = rng.standard_normal((vocab_words, emb_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    save_token_table(root / "vocab.emb", emb.astype(np.float32), words)
    return {
        "corpus": str(root / "corpus.jsonl"),
        "queries": str(root / "queries.jsonl"),
        "token_table": str(root / "vocab.emb"),
    }


def write_solvable_suite(root: Path, n_queries=4, n_docs=40, dim=16, pool=12,
                         target_rank=10, token_norm=2.0, seed=0):
    """On-disk dense fixture where every query is solvable by construction:
    token i of the shared table points at query i's target document."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    mat = rng.standard_normal((n_docs, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    doc_ids = [f"d{i:04d}" for i in range(n_docs)]
    write_jsonl(root / "corpus.jsonl", [{"doc_id": d, "text": f"document {d}"} for d in doc_ids])
    save_embedding_matrix(root / "docs.emb", mat.astype(np.float32), doc_ids)

    emb = rng.standard_normal((pool, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    query_rows, q_vecs, q_ids, target_rows = [], [], [], []
    for i in range(n_queries):
        q = rng.standard_normal(dim)
        q /= np.linalg.norm(q)
        order = np.lexsort((np.arange(n_docs), -(mat @ q)))
        t_idx = int(order[target_rank - 1])
        emb[i] = mat[t_idx]
        qid = f"q{i:02d}"
        query_rows.append({"query_id": qid, "text": f"question {qid}"})
        q_ids.append(qid)
        q_vecs.append(q.astype(np.float32))
        target_rows.append({"query_id": qid, "target_id": doc_ids[t_idx]})
    write_jsonl(root / "queries.jsonl", query_rows)
    save_embedding_matrix(root / "queries.emb", np.stack(q_vecs), q_ids)
    save_token_table(root / "vocab.emb", (emb * token_norm).astype(np.float32),
                     [f"tok{i}" for i in range(pool)])
    write_jsonl(root / "targets.jsonl", target_rows)
    return {
        "corpus": str(root / "corpus.jsonl"),
        "doc_embeddings": str(root / "docs.emb"),
        "queries": str(root / "queries.jsonl"),
        "query_embeddings": str(root / "queries.emb"),
        "token_table": str(root / "vocab.emb"),
        "targets": str(root / "targets.jsonl"),
    }


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT compilation happens once here, outside any timed assertions
    kernels.warmup()
