"""Token search pools and suffix fluency scoring.

Two readability-aware pool constructions: the contrastive pool (documents
most similar to the query, used to shape the attack objective) and the
masked-fill pool (tail positions of the query are masked, per-position
softmax over the vocabulary is averaged, top tokens kept).  Special tokens
never enter a pool; probability ties break by ascending token id so a
smaller pool is always a subset of a larger one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateInputError
from .io import Corpus, Query, TokenTable
from .retrieval import topk_indices
from .tdist import t_two_tailed_p


@dataclass
class PoolSpec:
    mode: str = "full"
    pool_size: int = 500
    tail_len: int = 3
    contrastive_n: int = 10

    def __post_init__(self):
        if self.mode not in ("full", "mlm"):
            raise ValueError(f"pool mode must be full or mlm, got {self.mode!r}")
        if self.pool_size < 1:
            raise ValueError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.mode == "mlm" and self.tail_len < 1:
            raise ValueError(f"tail_len must be >= 1 in mlm mode, got {self.tail_len}")


@dataclass
class CandidatePool:
    token_ids: np.ndarray
    probs: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])


def build_contrastive_pool(query: Query, corpus: Corpus, n: int, encoder) -> list[str]:
    """The n corpus documents most cosine-similar to the query embedding."""
    if not 1 <= n <= len(corpus):
        raise ValueError(f"n={n} out of range for {len(corpus)} documents")
    q_vec = query.embedding
    if q_vec is None:
        q_vec = encoder.embed_text(query.text)
    q_vec = np.asarray(q_vec, dtype=np.float64)
    matrix = corpus.embedding_matrix().astype(np.float64)
    normed = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    scores = normed @ (q_vec / np.linalg.norm(q_vec))
    return [corpus[int(i)].doc_id for i in topk_indices(scores, n)]


def build_mlm_pool(query: Query, spec: PoolSpec, encoder, table: TokenTable) -> CandidatePool:
    """Masked-fill candidate pool ranked by tail-averaged MLM probability."""
    want = min(spec.pool_size + len(table.special_mask), len(table))
    candidates = encoder.mlm_candidates(query.text, spec.tail_len, want)
    keep = [(tid, p) for tid, p in candidates if tid not in table.special_mask]
    # deterministic order: descending probability, ties by ascending token id
    keep.sort(key=lambda tp: (-tp[1], tp[0]))
    keep = keep[: spec.pool_size]
    ids = np.asarray([t for t, _ in keep], dtype=np.int64)
    probs = np.asarray([p for _, p in keep], dtype=np.float64)
    return CandidatePool(token_ids=ids, probs=probs)


def suffix_nll(texts: Sequence[str], encoder) -> list[float]:
    """Mean masked-token negative log-likelihood per text; lower is more fluent."""
    if not texts:
        return []
    return [nll for nll, _ in encoder.nll_and_ppl(list(texts))]


class WelchT(NamedTuple):
    t: float
    p: float
    dof: float


def welch_t(a: Sequence[float], b: Sequence[float]) -> WelchT:
    """Welch's unequal-variance t statistic with a two-tailed p-value.

    Degrees of freedom follow Welch-Satterthwaite; the p-value comes from the
    local Student-t implementation (accurate well past 1e-9).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("both samples need at least 2 observations")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise DegenerateInputError("both samples have zero variance")
    sa = va / a.shape[0]
    sb = vb / b.shape[0]
    se = math.sqrt(sa + sb)
    t = (float(a.mean()) - float(b.mean())) / se
    dof = (sa + sb) ** 2 / (sa**2 / (a.shape[0] - 1) + sb**2 / (b.shape[0] - 1))
    return WelchT(t=t, p=t_two_tailed_p(t, dof), dof=dof)
