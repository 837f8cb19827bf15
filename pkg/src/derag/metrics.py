"""Evaluation arithmetic over per-query attack records.

Covers the ranking-shift measures (Success@K, delta MRR, delta nDCG@20,
delta cosine, marginal gain per extra token, cumulative-success curves,
prefix/suffix complementarity), detector-score evaluation at target false
positive rates, and Pearson correlation.  Everything here is pure
aggregation over immutable records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError
from .tdist import t_two_tailed_p


@dataclass
class EvalRecord:
    query_id: str
    rank_before: int
    rank_after: int
    cos_before: float | None = None
    cos_after: float | None = None
    cos_suffix: float | None = None
    suffix_len: int = 0
    iterations: int = 0

    @classmethod
    def from_result(cls, row: Mapping) -> "EvalRecord":
        return cls(
            query_id=str(row["query_id"]),
            rank_before=int(row["rank_before"]),
            rank_after=int(row["rank_after"]),
            cos_before=row.get("cos_before"),
            cos_after=row.get("cos_after"),
            cos_suffix=row.get("cos_suffix"),
            suffix_len=int(row.get("suffix_len", 0)),
            iterations=int(row.get("iterations_used", row.get("iterations", 0))),
        )


def _check_records(records: Sequence[EvalRecord]) -> None:
    if not records:
        raise ValueError("no records")
    bad = [r.query_id for r in records if r.rank_before < 1 or r.rank_after < 1]
    if bad:
        raise ValueError(f"records with rank < 1 (partial results?): {bad[:3]}")


def success_at_k(records: Sequence[EvalRecord], k: int) -> float:
    """Fraction of records whose post-attack rank is within the top k."""
    _check_records(records)
    return sum(1 for r in records if r.rank_after <= k) / len(records)


def delta_mrr(records: Sequence[EvalRecord]) -> float:
    """Mean change in the target's reciprocal rank."""
    _check_records(records)
    return float(np.mean([1.0 / r.rank_after - 1.0 / r.rank_before for r in records]))


def ndcg_gain(rank: int) -> float:
    """Single-relevant nDCG@20 term: 1/log2(rank+1) inside the cutoff, else 0."""
    return 1.0 / math.log2(rank + 1) if rank <= 20 else 0.0


def delta_ndcg20(records: Sequence[EvalRecord]) -> float:
    _check_records(records)
    return float(np.mean([ndcg_gain(r.rank_after) - ndcg_gain(r.rank_before) for r in records]))


def delta_cos(records: Sequence[EvalRecord], mode: str = "query_baseline") -> float:
    """Mean cosine shift of the attacked query toward the target.

    ``query_baseline`` subtracts the original query's similarity;
    ``paper_literal`` subtracts the suffix-only similarity instead.
    """
    _check_records(records)
    if mode not in ("query_baseline", "paper_literal"):
        raise ValueError(f"unknown delta_cos mode {mode!r}")
    deltas = []
    for r in records:
        if r.cos_after is None:
            raise ValueError(f"record {r.query_id}: missing cos_after")
        if mode == "query_baseline":
            if r.cos_before is None:
                raise ValueError(f"record {r.query_id}: missing cos_before")
            deltas.append(r.cos_after - r.cos_before)
        else:
            if r.cos_suffix is None:
                raise ValueError(f"record {r.query_id}: missing suffix-only cosine baseline")
            deltas.append(r.cos_after - r.cos_suffix)
    return float(np.mean(deltas))


def mean_delta_rank(records: Sequence[EvalRecord]) -> float:
    _check_records(records)
    return float(np.mean([r.rank_before - r.rank_after for r in records]))


def marginal_gain(mean_delta_by_len: Mapping[int, float]) -> dict[int, float]:
    """gain(L) = mean delta rank at L minus at L-1, for each L with L-1 present."""
    lengths = sorted(mean_delta_by_len)
    if not lengths:
        raise ValueError("empty input")
    gains: dict[int, float] = {}
    for length in lengths[1:]:
        if length - 1 not in mean_delta_by_len:
            raise ValueError(f"missing length {length - 1} needed for gain at {length}")
        gains[length] = mean_delta_by_len[length] - mean_delta_by_len[length - 1]
    return gains


def cumulative_success_curve(results: Iterable[Mapping], k: int) -> dict[int, float]:
    """Fraction of queries succeeding at some suffix length <= L, per L.

    Expects sequential-variant result rows carrying per-stage ranks.
    """
    rows = list(results)
    if not rows:
        raise ValueError("no results")
    lengths = sorted({int(s["length"]) for row in rows for s in row.get("stages", [])})
    if not lengths:
        raise ValueError("results carry no per-stage records")
    curve: dict[int, float] = {}
    for length in lengths:
        hits = 0
        for row in rows:
            stages = row.get("stages", [])
            if any(int(s["length"]) <= length and int(s["rank"]) <= k for s in stages):
                hits += 1
        curve[length] = hits / len(rows)
    return curve


def complementarity_table(
    suffix_flags: Mapping[str, bool], prefix_flags: Mapping[str, bool]
) -> dict[str, int]:
    """Partition of queries by which insertion position succeeded (Success@1 flags)."""
    if set(suffix_flags) != set(prefix_flags):
        raise ValueError("suffix and prefix runs cover different query sets")
    counts = {"suffix_only": 0, "prefix_only": 0, "both": 0, "neither": 0}
    for qid, s_ok in suffix_flags.items():
        p_ok = prefix_flags[qid]
        if s_ok and p_ok:
            counts["both"] += 1
        elif s_ok:
            counts["suffix_only"] += 1
        elif p_ok:
            counts["prefix_only"] += 1
        else:
            counts["neither"] += 1
    counts["either"] = counts["suffix_only"] + counts["prefix_only"] + counts["both"]
    return counts


@dataclass
class DetectorSample:
    score: float
    label: str  # "adversarial" or "clean"


def auroc(samples: Sequence[DetectorSample]) -> float:
    """Area under the ROC curve via the rank statistic (ties get mean ranks)."""
    scores = np.asarray([s.score for s in samples], dtype=np.float64)
    pos = np.asarray([s.label == "adversarial" for s in samples])
    n_pos = int(pos.sum())
    n_neg = len(samples) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes for AUROC")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(samples), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(samples):
        j = i
        while j + 1 < len(samples) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r_pos = float(ranks[pos].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(samples: Sequence[DetectorSample]) -> float:
    """Area under the precision-recall curve by step integration."""
    scores = np.asarray([s.score for s in samples], dtype=np.float64)
    pos = np.asarray([s.label == "adversarial" for s in samples])
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == len(samples):
        raise ValueError("need both classes for AUPRC")
    order = np.argsort(-scores, kind="mergesort")
    tp = 0
    fp = 0
    area = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(samples):
        j = i
        while j + 1 < len(samples) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        for idx in order[i : j + 1]:
            if pos[idx]:
                tp += 1
            else:
                fp += 1
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


def detector_eval(
    samples: Sequence[DetectorSample],
    target_fprs: Sequence[float],
    higher_is_adversarial: bool = True,
) -> dict:
    """Threshold sweep at target false-positive rates plus AUROC/AUPRC.

    The threshold is the smallest observed score whose empirical FPR on clean
    samples stays within the target; a sample is flagged when its score is >=
    the threshold.  Set ``higher_is_adversarial=False`` for detectors whose
    low scores mean adversarial.
    """
    if not samples:
        raise ValueError("no samples")
    labels = {s.label for s in samples}
    if labels - {"adversarial", "clean"}:
        raise ValueError(f"unknown labels: {labels - {'adversarial', 'clean'}}")
    if len(labels) < 2:
        raise ValueError("need both classes")
    if not higher_is_adversarial:
        samples = [DetectorSample(-s.score, s.label) for s in samples]
    clean = np.asarray([s.score for s in samples if s.label == "clean"])
    adv = np.asarray([s.score for s in samples if s.label == "adversarial"])
    all_scores = np.concatenate([clean, adv])
    candidates = np.unique(all_scores)  # ascending

    rows = []
    for target in target_fprs:
        threshold = None
        for theta in candidates:
            fpr = float(np.mean(clean >= theta))
            if fpr <= target:
                threshold = float(theta)
                break
        if threshold is None:
            threshold = float(candidates[-1]) + 1.0  # above every score: nothing flagged
        actual_fpr = float(np.mean(clean >= threshold))
        tp = int(np.sum(adv >= threshold))
        fp = int(np.sum(clean >= threshold))
        fn = len(adv) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append(
            {
                "target_fpr": float(target),
                "threshold": threshold if higher_is_adversarial else -threshold,
                "actual_fpr": actual_fpr,
                "precision": precision,
                "recall": recall,
                "f1": f1,
            }
        )
    return {"per_target": rows, "auroc": auroc(samples), "auprc": auprc(samples)}


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; raises on constant series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.shape[0] < 2:
        raise ValueError("need two equal-length series with >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("correlation undefined for a constant series")
    return float(np.sum(xc * yc) / (sx * sy))


def pearson_p(r: float, n: int) -> float:
    """Two-tailed p-value for a Pearson correlation over n pairs."""
    if n < 3:
        raise ValueError("need at least 3 pairs")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return t_two_tailed_p(t, n - 2)
