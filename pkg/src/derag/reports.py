"""CSV/JSON table emission over results JSONL files.

Table shapes mirror the published layouts: the attack summary (per-variant
success rates, token and iteration costs, ranking shifts), prefix/suffix
complementarity counts, detector performance at target FPRs, cumulative
success versus suffix length, and fluency (NLL/PPL) aggregates.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import metrics
from .metrics import DetectorSample, EvalRecord
from .pool import welch_t


def read_results(paths: Sequence[str | Path]) -> list[dict]:
    """Load result rows from one or more JSONL files."""
    rows: list[dict] = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
    if not rows:
        raise ValueError("no result rows found")
    return rows


def complete_rows(rows: Iterable[Mapping]) -> list[dict]:
    return [dict(r) for r in rows if not r.get("partial")]


def summary_table(rows: Sequence[Mapping], ks: Sequence[int] = (1, 10, 20), label: str = "") -> dict:
    """One summary row in the headline-table shape."""
    rows = complete_rows(rows)
    records = [EvalRecord.from_result(r) for r in rows]
    out = {
        "label": label,
        "variant": rows[0].get("variant", ""),
        "queries": len(records),
    }
    for k in ks:
        out[f"succ@{k}"] = metrics.success_at_k(records, k)
    out["avg_tok"] = float(np.mean([r.suffix_len for r in records]))
    out["avg_iter"] = float(np.mean([r.iterations for r in records]))
    out["delta_mrr"] = metrics.delta_mrr(records)
    out["delta_ndcg20"] = metrics.delta_ndcg20(records)
    out["mean_delta_rank"] = metrics.mean_delta_rank(records)
    if all(r.cos_after is not None and r.cos_before is not None for r in records):
        out["delta_cos"] = metrics.delta_cos(records, mode="query_baseline")
    return out


def success_flags(rows: Sequence[Mapping], k: int = 1) -> dict[str, bool]:
    """query_id -> Success@k flag, for complementarity tables."""
    flags = {}
    for r in complete_rows(rows):
        flags[str(r["query_id"])] = int(r["rank_after"]) <= k
    return flags


def complementarity_report(
    suffix_rows: Sequence[Mapping], prefix_rows: Sequence[Mapping], k: int = 1
) -> dict[str, int]:
    return metrics.complementarity_table(
        success_flags(suffix_rows, k), success_flags(prefix_rows, k)
    )


def curve_report(rows: Sequence[Mapping], k: int) -> dict[int, float]:
    return metrics.cumulative_success_curve(complete_rows(rows), k)


def detector_report(
    samples_path: str | Path,
    target_fprs: Sequence[float],
    higher_is_adversarial: bool = True,
) -> dict:
    """Detector table from a JSONL of {"score": float, "label": str} lines."""
    samples = []
    with open(samples_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                samples.append(DetectorSample(score=float(obj["score"]), label=str(obj["label"])))
    return metrics.detector_eval(samples, target_fprs, higher_is_adversarial)


def fluency_report(rows: Sequence[Mapping]) -> dict:
    """Mean PPL and detector-probability columns for original vs attacked queries.

    Expects rows with ppl_before/ppl_after and optionally cls_before/cls_after.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no fluency rows")
    out = {
        "queries": len(rows),
        "ppl_before": float(np.mean([r["ppl_before"] for r in rows])),
        "ppl_after": float(np.mean([r["ppl_after"] for r in rows])),
    }
    if all("cls_before" in r and "cls_after" in r for r in rows):
        out["cls_before"] = float(np.mean([r["cls_before"] for r in rows]))
        out["cls_after"] = float(np.mean([r["cls_after"] for r in rows]))
    return out


def nll_comparison(nll_a: Sequence[float], nll_b: Sequence[float]) -> dict:
    """Mean/std of two suffix NLL samples plus Welch's t-test between them."""
    a = np.asarray(nll_a, dtype=np.float64)
    b = np.asarray(nll_b, dtype=np.float64)
    res = welch_t(a, b)
    return {
        "mean_a": float(a.mean()),
        "std_a": float(a.std(ddof=1)),
        "mean_b": float(b.mean()),
        "std_b": float(b.std(ddof=1)),
        "t": res.t,
        "p": res.p,
        "dof": res.dof,
    }


def write_csv(path: str | Path, rows: Sequence[Mapping], header: Sequence[str] | None = None) -> None:
    rows = list(rows)
    if header is None:
        header = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in header})


def write_json(path: str | Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
