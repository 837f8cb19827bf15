"""Dense (cosine) and sparse (BM25) retrieval behind one ranking interface.

Both retrievers expose ``all_scores(query_repr)`` returning one float64 score
per corpus document; ``tau_k``, ``rank_of``, and ``retrieve_topk`` are built
on that array.  A query representation is an embedding vector for the dense
retriever and a term-id array (see :meth:`SparseRetriever.query_terms`) for
BM25.  Ties rank by ascending corpus index, so rankings are deterministic.
Retrievers are read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateInputError
from .io import Corpus, Document, tokenize


@dataclass
class RankedList:
    """(doc_id, score) entries in descending score order."""

    entries: list[tuple[str, float]]

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two equal-dimension nonzero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / n


class DenseRetriever:
    """Exact cosine-similarity retrieval over precomputed document embeddings.

    Stored vectors stay raw; normalization happens once at build time into a
    scoring copy.
    """

    kind = "dense"

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        matrix = corpus.embedding_matrix().astype(np.float64)
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.argmin(norms))
            raise DegenerateInputError(f"zero embedding for doc {corpus[bad].doc_id!r}")
        self._normed = matrix / norms[:, None]

    def __len__(self) -> int:
        return len(self.corpus)

    def all_scores(self, embedding: np.ndarray) -> np.ndarray:
        return kernels.dense_scores(normalize(embedding), self._normed)

    def doc_score(self, embedding: np.ndarray, doc_id: str) -> float:
        idx = self.corpus.index_of(doc_id)
        return float(np.dot(normalize(embedding), self._normed[idx]))

    def pseudo_score(self, embedding: np.ndarray, pseudo: np.ndarray) -> float:
        """Score a non-corpus vector as if it were a retrievable item."""
        return cosine_sim(embedding, pseudo)


class SparseRetriever:
    """BM25 retrieval over corpus term statistics.

    idf is Robertson/Sparck-Jones, floored at zero; defaults k1=1.2, b=0.75.
    """

    kind = "sparse"

    def __init__(self, corpus: Corpus, k1: float = 1.2, b: float = 0.75):
        if k1 <= 0:
            raise ValueError(f"k1 must be > 0, got {k1}")
        if not 0.0 <= b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {b}")
        self.corpus = corpus
        self.k1 = float(k1)
        self.b = float(b)

        vocab: dict[str, int] = {}
        df: list[int] = []
        postings: list[list[tuple[int, float]]] = []
        doc_lens = np.zeros(len(corpus), dtype=np.float64)
        for i, doc in enumerate(corpus):
            doc_lens[i] = doc.length
            for term, tf in doc.term_freqs.items():
                tid = vocab.get(term)
                if tid is None:
                    tid = len(vocab)
                    vocab[term] = tid
                    df.append(0)
                    postings.append([])
                df[tid] += 1
                postings[tid].append((i, float(tf)))

        n = len(corpus)
        self.vocab = vocab
        self.doc_lens = doc_lens
        self.avgdl = float(doc_lens.mean()) if n else 0.0
        self.idf = np.zeros(len(vocab), dtype=np.float64)
        for tid, n_t in enumerate(df):
            self.idf[tid] = max(0.0, np.log((n - n_t + 0.5) / (n_t + 0.5)))

        counts = [len(p) for p in postings]
        self._offsets = np.zeros(len(vocab) + 1, dtype=np.int64)
        np.cumsum(counts, out=self._offsets[1:])
        self._post_docs = np.empty(int(self._offsets[-1]), dtype=np.int64)
        self._post_tfs = np.empty(int(self._offsets[-1]), dtype=np.float64)
        pos = 0
        for plist in postings:
            for doc_idx, tf in plist:
                self._post_docs[pos] = doc_idx
                self._post_tfs[pos] = tf
                pos += 1

    def __len__(self) -> int:
        return len(self.corpus)

    def query_terms(self, text: str) -> np.ndarray:
        """Tokenize text into in-vocabulary term ids (repeats preserved)."""
        ids = [self.vocab[t] for t in tokenize(text) if t in self.vocab]
        return np.asarray(ids, dtype=np.int64)

    def all_scores(self, term_ids: np.ndarray) -> np.ndarray:
        term_ids = np.asarray(term_ids, dtype=np.int64)
        if self.avgdl == 0.0:
            return np.zeros(len(self.corpus), dtype=np.float64)
        return kernels.bm25_scores(
            term_ids,
            self._post_docs,
            self._post_tfs,
            self._offsets,
            self.idf,
            self.doc_lens,
            self.avgdl,
            self.k1,
            self.b,
            len(self.corpus),
        )

    def term_idf(self, term: str) -> float:
        tid = self.vocab.get(term)
        return float(self.idf[tid]) if tid is not None else 0.0

    def score_document(self, query_terms: list[str], doc: Document) -> float:
        """BM25 score of an arbitrary document (need not be in the corpus)."""
        if self.avgdl == 0.0:
            return 0.0
        score = 0.0
        norm = self.k1 * (1.0 - self.b + self.b * doc.length / self.avgdl)
        for term in query_terms:
            tf = doc.term_freqs.get(term, 0)
            if tf == 0:
                continue
            score += self.term_idf(term) * tf * (self.k1 + 1.0) / (tf + norm)
        return score

    def doc_score(self, term_ids: np.ndarray, doc_id: str) -> float:
        idx = self.corpus.index_of(doc_id)
        return float(self.all_scores(term_ids)[idx])

    def pseudo_score(self, term_ids: np.ndarray, pseudo_text: str) -> float:
        """Score free text as if it were a retrievable corpus item."""
        terms = tokenize(pseudo_text)
        freqs: dict[str, int] = {}
        for t in terms:
            freqs[t] = freqs.get(t, 0) + 1
        inv = {tid: term for term, tid in self.vocab.items()}
        query = [inv[int(t)] for t in term_ids]
        return self.score_document(query, Document("", pseudo_text, term_freqs=freqs, length=len(terms)))


Retriever = DenseRetriever | SparseRetriever


def bm25_score(query_terms: list[str], doc: Document, retriever: SparseRetriever) -> float:
    return retriever.score_document(query_terms, doc)


def tau_from_scores(scores: np.ndarray, k: int) -> float:
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} documents")
    return float(np.partition(scores, n - k)[n - k])


def rank_from_scores(scores: np.ndarray, ref_score: float) -> int:
    """1 + number of documents scoring strictly above ``ref_score``."""
    return int(np.count_nonzero(scores > ref_score)) + 1


def tau_k(query_repr, k: int, retriever: Retriever) -> float:
    """k-th largest similarity between the query and all corpus documents."""
    return tau_from_scores(retriever.all_scores(query_repr), k)


def rank_of(query_repr, target_doc_id: str, retriever: Retriever) -> int:
    """Rank of the target: 1 + count of documents strictly more similar."""
    scores = retriever.all_scores(query_repr)
    idx = retriever.corpus.index_of(target_doc_id)
    return rank_from_scores(scores, float(scores[idx]))


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} documents")
    order = np.lexsort((np.arange(n), -scores))
    return order[:k]


def retrieve_topk(query_repr, k: int, retriever: Retriever) -> RankedList:
    """Top-k documents by score; ties broken by ascending corpus index."""
    scores = retriever.all_scores(query_repr)
    idx = topk_indices(scores, k)
    return RankedList([(retriever.corpus[int(i)].doc_id, float(scores[i])) for i in idx])
