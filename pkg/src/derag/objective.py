"""Attack objectives: hinge loss, robust hinge, cosine-loss baseline, success rule.

The hinge loss is ``max{0, tau_k - sim(query_repr, target)}`` where tau_k is
the k-th largest similarity between the attacked query and all corpus
documents; it is zero exactly when the target ranks within the top k.  The
cosine baseline is simply the negated query-target similarity.  All
objectives are pure functions of immutable inputs and may be evaluated
concurrently; :class:`AttackObjective` adds a per-run memo keyed on the token
sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .io import Corpus, Query
from .retrieval import (
    DenseRetriever,
    Retriever,
    cosine_sim,
    rank_from_scores,
    tau_from_scores,
)


@dataclass
class AttackTarget:
    query: Query
    target_doc_id: str
    k: int

    def validate(self, corpus: Corpus) -> None:
        if self.target_doc_id not in corpus:
            raise KeyError(f"unknown target id {self.target_doc_id!r}")
        if not 1 <= self.k <= len(corpus):
            raise ValueError(f"k={self.k} out of range for {len(corpus)} documents")


@dataclass
class LossValue:
    value: float
    encoder_calls: int = 0


@dataclass
class Outcome:
    """Everything one scoring pass yields for a candidate token sequence."""

    loss: float
    rank: int
    success: bool
    target_sim: float


def robust_hinge(
    q_vec: np.ndarray,
    target_vec: np.ndarray,
    corpus,
    n_pert: int = 12,
    eps: float = 0.2,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst-case hinge at k=10 over Gaussian perturbations of the query.

    Each of ``n_pert`` draws adds noise ~ N(0, eps^2 I) to ``q_vec``; the term
    is [10th-highest corpus score - target score]_+ under that perturbed
    query.  Perturbations are resampled per evaluation from ``rng``.
    ``corpus`` may be a Corpus or a raw (n, d) embedding matrix.
    """
    if n_pert < 1:
        raise ValueError(f"n_pert must be >= 1, got {n_pert}")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    matrix = corpus.embedding_matrix() if isinstance(corpus, Corpus) else np.asarray(corpus)
    matrix = matrix.astype(np.float64)
    n = matrix.shape[0]
    if n < 10:
        raise ValueError(f"robust hinge needs at least 10 documents, got {n}")
    normed = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    q_vec = np.asarray(q_vec, dtype=np.float64)
    t_unit = np.asarray(target_vec, dtype=np.float64)
    t_unit = t_unit / np.linalg.norm(t_unit)
    rng = rng or np.random.default_rng()
    worst = 0.0
    for _ in range(n_pert):
        delta = rng.normal(0.0, eps, size=q_vec.shape[0]) if eps > 0 else 0.0
        q = q_vec + delta
        qn = q / np.linalg.norm(q)
        scores = normed @ qn
        s10 = float(np.partition(scores, n - 10)[n - 10])
        s_tgt = float(qn @ t_unit)
        term = s10 - s_tgt
        if term > worst:
            worst = term
    return worst


class AttackObjective:
    """Scoring context binding a target, retriever, encoder, and loss kind.

    ``evaluate`` performs one scoring pass and returns loss, rank of the
    target, and the stopping-rule success flag.  Results are memoized per
    token sequence, so re-queries after a stage cost nothing.

    Success modes (for rank(attacked) <= k plus a second clause):

    * ``literal``: the original query embedding, treated as a retrievable
      item, must itself rank outside the top k.
    * ``displacement``: the document that was top-ranked before the attack
      must now sit outside the top k.
    """

    def __init__(
        self,
        target: AttackTarget,
        retriever: Retriever,
        encoder=None,
        position: str = "suffix",
        kind: str = "hinge",
        success_mode: str = "literal",
        token_table=None,
        robust_pert: int = 12,
        robust_eps: float = 0.2,
        rng: np.random.Generator | None = None,
    ):
        if kind not in ("hinge", "cosine", "robust_hinge"):
            raise ValueError(f"unknown loss kind {kind!r}")
        if success_mode not in ("literal", "displacement"):
            raise ValueError(f"unknown success mode {success_mode!r}")
        if position not in ("suffix", "prefix"):
            raise ValueError(f"position must be suffix or prefix, got {position!r}")
        target.validate(retriever.corpus)
        self.target = target
        self.retriever = retriever
        self.encoder = encoder
        self.position = position
        self.kind = kind
        self.success_mode = success_mode
        self.token_table = token_table if token_table is not None else getattr(encoder, "token_table", None)
        self.robust_pert = robust_pert
        self.robust_eps = robust_eps
        self.rng = rng
        self._target_idx = retriever.corpus.index_of(target.target_doc_id)
        self._memo: dict[tuple[int, ...], Outcome] = {}
        self._dense = retriever.kind == "dense"
        if self._dense and encoder is None:
            raise ValueError("dense attacks require an encoder client")
        if not self._dense and kind in ("cosine", "robust_hinge"):
            raise ValueError(f"{kind} loss needs a dense retriever")
        if not self._dense and self.token_table is None:
            raise ValueError("sparse attacks need a token table to render suffixes")
        if self._dense:
            self._target_vec = retriever.corpus[self._target_idx].embedding.astype(np.float64)
        # reference item for the second success clause
        base_scores = self.retriever.all_scores(self._base_repr())
        self._top_before_idx = int(np.lexsort((np.arange(len(base_scores)), -base_scores))[0])
        self.baseline_rank = rank_from_scores(base_scores, float(base_scores[self._target_idx]))

    def _base_repr(self):
        if self._dense:
            return self.encoder.embed_tokens(self.target.query, (), self.position)
        return self.retriever.query_terms(self.target.query.text)

    def query_repr(self, tokens: Sequence[int]):
        if self._dense:
            return self.encoder.embed_tokens(self.target.query, tokens, self.position)
        from .encoder import attack_text, merge_wordpieces

        surfaces = [self.token_table.surface(int(t)) for t in tokens]
        text = attack_text(self.target.query.text, merge_wordpieces(surfaces), self.position)
        return self.retriever.query_terms(text)

    def _success(self, repr_, scores: np.ndarray, rank: int) -> bool:
        if rank > self.target.k:
            return False
        if self.success_mode == "displacement":
            ref = float(scores[self._top_before_idx])
        else:
            if self._dense:
                ref = self.retriever.pseudo_score(repr_, self._query_vec())
            else:
                ref = self.retriever.pseudo_score(repr_, self.target.query.text)
        return rank_from_scores(scores, ref) > self.target.k

    def _query_vec(self) -> np.ndarray:
        q = self.target.query
        if q.embedding is not None:
            return np.asarray(q.embedding, dtype=np.float64)
        return self.encoder.embed_tokens(q, (), self.position)

    def evaluate(self, tokens: Sequence[int]) -> Outcome:
        key = tuple(int(t) for t in tokens)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        repr_ = self.query_repr(key)
        scores = self.retriever.all_scores(repr_)
        sim_t = float(scores[self._target_idx])
        rank = rank_from_scores(scores, sim_t)
        if self.kind == "hinge":
            loss = max(0.0, tau_from_scores(scores, self.target.k) - sim_t)
        elif self.kind == "cosine":
            loss = -cosine_sim(repr_, self._target_vec)
        else:
            loss = robust_hinge(
                repr_,
                self._target_vec,
                self.retriever.corpus,
                self.robust_pert,
                self.robust_eps,
                self.rng,
            )
        out = Outcome(loss=loss, rank=rank, success=self._success(repr_, scores, rank), target_sim=sim_t)
        if self.kind != "robust_hinge":  # robust loss is stochastic per evaluation
            self._memo[key] = out
        return out

    def loss(self, tokens: Sequence[int]) -> float:
        return self.evaluate(tokens).loss


def hinge_loss(
    tokens: Sequence[int],
    target: AttackTarget,
    retriever: Retriever,
    encoder=None,
    position: str = "suffix",
) -> LossValue:
    """Gap between the top-k threshold and the target under the attacked query."""
    before = getattr(encoder, "calls", 0)
    obj = AttackObjective(target, retriever, encoder, position=position, kind="hinge")
    value = obj.loss(tokens)
    return LossValue(value=value, encoder_calls=getattr(encoder, "calls", 0) - before)


def cosine_loss(
    tokens: Sequence[int],
    target: AttackTarget,
    retriever: DenseRetriever,
    encoder=None,
    position: str = "suffix",
) -> float:
    """Negated cosine similarity between the attacked query and the target."""
    obj = AttackObjective(target, retriever, encoder, position=position, kind="cosine")
    return obj.loss(tokens)


def success_indicator(
    tokens: Sequence[int],
    target: AttackTarget,
    retriever: Retriever,
    encoder=None,
    mode: str = "literal",
    position: str = "suffix",
) -> bool:
    """Stopping rule: target inside top-k and the reference item pushed out."""
    obj = AttackObjective(target, retriever, encoder, position=position, success_mode=mode)
    return obj.evaluate(tokens).success
