"""Command-line harness: attack runs, ablations, geometry probes, reports.

Exit codes: 0 on success, 1 when partial failures were recorded in the
results file, 2 on configuration or I/O errors.  Progress and logging go to
stderr; data goes only to files.  ``DERAG_ENCODER_URL`` is the fallback for
``--encoder-url``; the special value ``synthetic`` selects the deterministic
in-process encoder.
"""

from __future__ import annotations

import datetime
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, metrics, reports
from .de import DEConfig, run_attack
from .encoder import EncoderClient, EncoderEndpoint, SyntheticEncoder
from .errors import DeragError
from .geometry import ProbeConfig, estimate_d1, orthogonal_directions, scan_surface, slope_vs_rank_experiment
from .io import (
    Corpus,
    attach_embeddings,
    attach_query_embeddings,
    load_corpus,
    load_embedding_matrix,
    load_queries,
    load_token_table,
)
from .objective import AttackObjective, AttackTarget
from .pool import PoolSpec, build_contrastive_pool, build_mlm_pool
from .retrieval import DenseRetriever, SparseRetriever, topk_indices


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


def _log(message: str) -> None:
    click.echo(message, err=True)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _data_options(fn):
    opts = [
        click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--token-table", "table_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--doc-embeddings", "doc_emb_path", type=click.Path(exists=True, dir_okay=False)),
        click.option("--query-embeddings", "query_emb_path", type=click.Path(exists=True, dir_okay=False)),
        click.option("--retriever", "retriever_kind", type=click.Choice(["dense", "bm25"]), default="dense", show_default=True),
        click.option("--bm25-k1", type=float, default=1.2, show_default=True),
        click.option("--bm25-b", type=float, default=0.75, show_default=True),
        click.option("--encoder-url", envvar="DERAG_ENCODER_URL", default=None, help="Encoder service URL, or 'synthetic'."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load_world(
    corpus_path,
    queries_path,
    table_path,
    doc_emb_path,
    query_emb_path,
    retriever_kind,
    bm25_k1,
    bm25_b,
    encoder_url,
    synthetic_seed: int = 0,
):
    try:
        corpus = load_corpus(corpus_path)
        queries = load_queries(queries_path)
        table = load_token_table(table_path)
        if doc_emb_path:
            matrix, ids = load_embedding_matrix(doc_emb_path)
            attach_embeddings(corpus, matrix, ids)
        if query_emb_path:
            matrix, ids = load_embedding_matrix(query_emb_path)
            attach_query_embeddings(queries, matrix, ids)

        if retriever_kind == "dense":
            if corpus.dim is None:
                raise DeragError("dense retrieval needs --doc-embeddings")
            retriever = DenseRetriever(corpus)
        else:
            retriever = SparseRetriever(corpus, k1=bm25_k1, b=bm25_b)

        encoder = None
        if encoder_url:
            if encoder_url.strip().lower() == "synthetic":
                encoder = SyntheticEncoder(table, seed=synthetic_seed)
            else:
                encoder = EncoderClient(EncoderEndpoint(base_url=encoder_url), token_table=table)
        if retriever_kind == "dense" and encoder is None:
            raise DeragError("dense attacks need --encoder-url (or DERAG_ENCODER_URL); use 'synthetic' for the test double")
    except (DeragError, OSError, KeyError, ValueError) as exc:
        _fail(str(exc))
    return corpus, queries, table, retriever, encoder


def _resolve_targets(queries, targets_path, target_rank, retriever, encoder, position):
    """Map query -> target doc id, from a targets file or a fixed baseline rank."""
    if (targets_path is None) == (target_rank is None):
        _fail("exactly one of --targets / --target-rank is required")
    if targets_path is not None:
        mapping = {}
        with open(targets_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    mapping[str(obj["query_id"])] = str(obj["target_id"])
        missing = [q.query_id for q in queries if q.query_id not in mapping]
        if missing:
            _fail(f"--targets lacks entries for {len(missing)} queries (first: {missing[0]})")
        return mapping
    if not 1 <= target_rank <= len(retriever.corpus):
        _fail(f"--target-rank {target_rank} out of range for {len(retriever.corpus)} docs")
    mapping = {}
    for q in queries:
        if retriever.kind == "dense":
            vec = q.embedding if q.embedding is not None else encoder.embed_tokens(q, (), position)
            scores = retriever.all_scores(vec)
        else:
            scores = retriever.all_scores(retriever.query_terms(q.text))
        idx = int(topk_indices(scores, target_rank)[-1])
        mapping[q.query_id] = retriever.corpus[idx].doc_id
    return mapping


def _write_manifest(out_path: Path, command: str, config: dict, datasets: dict, seed: int) -> None:
    manifest = {
        "tool": "derag",
        "version": __version__,
        "command": command,
        "created_utc": _utc_now(),
        "seed": seed,
        "config": config,
        "datasets": datasets,
    }
    reports.write_json(str(out_path) + ".manifest.json", manifest)


@click.group()
@click.version_option(__version__)
def main():
    """Adversarial query-suffix attacks on dense and BM25 retrievers."""


@main.command()
@_data_options
@click.option("--variant", type=click.Choice(["seq_stop", "fixed_stop", "seq", "random"]), default="seq_stop", show_default=True)
@click.option("--position", type=click.Choice(["suffix", "prefix"]), default="suffix", show_default=True)
@click.option("--k", type=int, default=10, show_default=True, help="Success threshold: target must reach top-k.")
@click.option("--n-max", type=int, default=5, show_default=True)
@click.option("--pop", type=int, default=24, show_default=True)
@click.option("--gens", type=int, default=120, show_default=True)
@click.option("--cr", type=float, default=0.5, show_default=True)
@click.option("--f", "scale_factor", type=float, default=0.5, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--pool-mode", type=click.Choice(["full", "mlm"]), default="full", show_default=True)
@click.option("--pool-size", type=int, default=500, show_default=True)
@click.option("--tail-len", type=int, default=3, show_default=True)
@click.option("--loss", type=click.Choice(["hinge", "cosine"]), default="hinge", show_default=True)
@click.option("--success-mode", type=click.Choice(["literal", "displacement"]), default="literal", show_default=True)
@click.option("--contrastive-n", type=int, default=None,
              help="Restrict the attack objective to the top-N query-similar docs (plus the target); "
                   "final ranks are still measured on the full corpus.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--targets", "targets_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--target-rank", type=int, default=None, help="Attack the doc at this baseline rank per query.")
@click.option("--random-budget", type=int, default=None, help="Evaluation budget for the random baseline (default pop*gens).")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def attack(
    corpus_path, queries_path, table_path, doc_emb_path, query_emb_path, retriever_kind,
    bm25_k1, bm25_b, encoder_url, variant, position, k, n_max, pop, gens, cr, scale_factor,
    patience, pool_mode, pool_size, tail_len, loss, success_mode, contrastive_n, seed,
    targets_path, target_rank, random_budget, workers, out_path,
):
    """Run one attack per query and write AttackResult JSONL plus a manifest."""
    corpus, queries, table, retriever, encoder = _load_world(
        corpus_path, queries_path, table_path, doc_emb_path, query_emb_path,
        retriever_kind, bm25_k1, bm25_b, encoder_url, synthetic_seed=seed,
    )
    if not 1 <= k <= len(corpus):
        _fail(f"--k {k} out of range for {len(corpus)} docs")
    try:
        cfg = DEConfig(
            pop_size=pop, scale_factor=scale_factor, crossover_rate=cr, max_generations=gens,
            patience=patience, n_max=n_max, position=position, variant=variant, seed=seed,
        )
    except ValueError as exc:
        _fail(str(exc))
    target_map = _resolve_targets(queries, targets_path, target_rank, retriever, encoder, position)
    if contrastive_n is not None:
        if retriever.kind != "dense":
            _fail("--contrastive-n needs the dense retriever")
        if not 1 <= contrastive_n <= len(corpus):
            _fail(f"--contrastive-n {contrastive_n} out of range for {len(corpus)} docs")

    pool_spec = PoolSpec(mode=pool_mode, pool_size=pool_size, tail_len=tail_len)

    def attack_one(query):
        pool_ids = None
        if pool_spec.mode == "mlm":
            pool_ids = build_mlm_pool(query, pool_spec, encoder, table).token_ids
        target_id = target_map[query.query_id]
        target = AttackTarget(query=query, target_doc_id=target_id, k=k)
        attack_retriever = retriever
        if contrastive_n is not None:
            doc_ids = build_contrastive_pool(query, corpus, contrastive_n, encoder)
            if target_id not in doc_ids:
                doc_ids.append(target_id)
            attack_retriever = DenseRetriever(Corpus([corpus.doc(d) for d in doc_ids]))
        result = run_attack(
            query, target, cfg, attack_retriever, encoder, token_table=table, pool_ids=pool_ids,
            loss=loss, success_mode=success_mode, random_budget=random_budget,
        )
        if contrastive_n is not None and not result.partial:
            # the restricted corpus only shapes the objective; report ranks
            # against the full corpus
            full = AttackObjective(target, retriever, encoder, position=position, token_table=table)
            out = full.evaluate(tuple(result.suffix_token_ids))
            result.rank_before = full.baseline_rank
            result.rank_after = out.rank
            result.success_at = {kk: out.rank <= kk for kk in result.success_at}
            result.loss_final = out.loss
        return result

    queries = sorted(queries, key=lambda q: q.query_id)
    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(attack_one, queries))
    else:
        results = [attack_one(q) for q in queries]
    elapsed = time.perf_counter() - t0

    results.sort(key=lambda r: r.query_id)
    out = Path(out_path)
    with open(out, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False))
            fh.write("\n")
    _write_manifest(
        out, "attack",
        config={
            "retriever": retriever_kind, "variant": variant, "position": position, "k": k,
            "n_max": n_max, "pop": pop, "gens": gens, "cr": cr, "f": scale_factor,
            "patience": patience, "pool_mode": pool_mode, "pool_size": pool_size,
            "tail_len": tail_len, "loss": loss, "success_mode": success_mode,
            "contrastive_n": contrastive_n,
            "target_rank": target_rank, "random_budget": random_budget,
            "bm25_k1": bm25_k1, "bm25_b": bm25_b,
            "encoder_url": encoder_url,
        },
        datasets={
            "corpus": str(corpus_path), "queries": str(queries_path),
            "token_table": str(table_path), "doc_embeddings": doc_emb_path,
            "query_embeddings": query_emb_path, "targets": targets_path,
        },
        seed=seed,
    )
    n_partial = sum(1 for r in results if r.partial)
    n_succ = sum(1 for r in results if not r.partial and r.rank_after <= k)
    _log(
        f"{len(results)} attacks in {elapsed:.1f}s: {n_succ} reached top-{k}, "
        f"{n_partial} partial -> {out}"
    )
    sys.exit(1 if n_partial else 0)


@main.command()
@_data_options
@click.option("--lengths", default="1,2,3,4,5", show_default=True, help="Comma-separated suffix lengths to sweep.")
@click.option("--pool-sizes", default="", help="Comma-separated MLM pool sizes to sweep (empty: full vocabulary).")
@click.option("--losses", default="hinge", show_default=True, help="Comma-separated subset of hinge,cosine.")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--pop", type=int, default=24, show_default=True)
@click.option("--gens", type=int, default=40, show_default=True)
@click.option("--cr", type=float, default=0.5, show_default=True)
@click.option("--f", "scale_factor", type=float, default=0.5, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--tail-len", type=int, default=3, show_default=True)
@click.option("--position", type=click.Choice(["suffix", "prefix"]), default="suffix", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--targets", "targets_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--target-rank", type=int, default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def ablate(
    corpus_path, queries_path, table_path, doc_emb_path, query_emb_path, retriever_kind,
    bm25_k1, bm25_b, encoder_url, lengths, pool_sizes, losses, k, pop, gens, cr,
    scale_factor, patience, tail_len, position, seed, targets_path, target_rank, out_dir,
):
    """Sweep suffix length x pool size x loss; emit per-setting aggregate tables."""
    corpus, queries, table, retriever, encoder = _load_world(
        corpus_path, queries_path, table_path, doc_emb_path, query_emb_path,
        retriever_kind, bm25_k1, bm25_b, encoder_url, synthetic_seed=seed,
    )
    length_list = [int(x) for x in lengths.split(",") if x.strip()]
    loss_list = [x.strip() for x in losses.split(",") if x.strip()]
    size_list = [int(x) for x in pool_sizes.split(",") if x.strip()] or [None]
    for lo in loss_list:
        if lo not in ("hinge", "cosine"):
            _fail(f"unknown loss {lo!r}")
    target_map = _resolve_targets(queries, targets_path, target_rank, retriever, encoder, position)
    queries = sorted(queries, key=lambda q: q.query_id)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for loss in loss_list:
        for size in size_list:
            mean_dr_by_len: dict[int, float] = {}
            for length in length_list:
                cfg = DEConfig(
                    pop_size=pop, scale_factor=scale_factor, crossover_rate=cr,
                    max_generations=gens, patience=patience, n_max=length,
                    position=position, variant="fixed_stop", seed=seed,
                )
                build_s = 0.0
                query_s = 0.0
                results = []
                for query in queries:
                    pool_ids = None
                    if size is not None:
                        t0 = time.perf_counter()
                        spec = PoolSpec(mode="mlm", pool_size=size, tail_len=tail_len)
                        pool_ids = build_mlm_pool(query, spec, encoder, table).token_ids
                        build_s += time.perf_counter() - t0
                    target = AttackTarget(query=query, target_doc_id=target_map[query.query_id], k=k)
                    t0 = time.perf_counter()
                    results.append(
                        run_attack(query, target, cfg, retriever, encoder, token_table=table,
                                   pool_ids=pool_ids, loss=loss)
                    )
                    query_s += time.perf_counter() - t0
                records = [metrics.EvalRecord.from_result(r.to_dict()) for r in results if not r.partial]
                mean_dr = metrics.mean_delta_rank(records)
                mean_dr_by_len[length] = mean_dr
                rows.append(
                    {
                        "loss": loss,
                        "pool_size": size if size is not None else "full",
                        "length": length,
                        "queries": len(records),
                        f"succ@{k}": metrics.success_at_k(records, k),
                        "succ@1": metrics.success_at_k(records, 1),
                        "delta_mrr": metrics.delta_mrr(records),
                        "mean_delta_rank": mean_dr,
                        "marginal_gain": "",
                        "avg_iter": float(np.mean([r.iterations for r in records])),
                        "build_s": build_s,
                        "query_s": query_s,
                    }
                )
                _log(f"ablate loss={loss} pool={size or 'full'} L={length}: mean delta rank {mean_dr:.2f}")
            gains = metrics.marginal_gain(mean_dr_by_len) if len(mean_dr_by_len) > 1 else {}
            for row in rows:
                if row["loss"] == loss and row["pool_size"] == (size if size is not None else "full"):
                    if row["length"] in gains:
                        row["marginal_gain"] = gains[row["length"]]
    reports.write_csv(out_dir / "ablation.csv", rows)
    reports.write_json(out_dir / "ablation.json", rows)
    _write_manifest(
        out_dir / "ablation", "ablate",
        config={"lengths": length_list, "pool_sizes": pool_sizes, "losses": loss_list, "k": k,
                "pop": pop, "gens": gens, "cr": cr, "f": scale_factor, "patience": patience,
                "position": position, "retriever": retriever_kind},
        datasets={"corpus": str(corpus_path), "queries": str(queries_path), "token_table": str(table_path)},
        seed=seed,
    )
    _log(f"{len(rows)} ablation rows -> {out_dir}")


@main.group()
def probe():
    """Geometry probes: score-surface scans and slope-vs-rank pairing."""


@probe.command("surface")
@_data_options
@click.option("--query-id", required=True)
@click.option("--target-rank", type=int, default=100, show_default=True)
@click.option("--grid", type=int, default=41, show_default=True)
@click.option("--eta", type=float, default=1e-3, show_default=True)
@click.option("--n-directions", type=int, default=512, show_default=True)
@click.option("--planes", type=click.Choice(["d1d2", "all"]), default="d1d2", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def probe_surface(
    corpus_path, queries_path, table_path, doc_emb_path, query_emb_path, retriever_kind,
    bm25_k1, bm25_b, encoder_url, query_id, target_rank, grid, eta, n_directions,
    planes, seed, out_dir,
):
    """Scan cos(q + a*d1 + b*d2, target) over [-1,1]^2; write alpha,beta,score CSV."""
    corpus, queries, table, retriever, encoder = _load_world(
        corpus_path, queries_path, table_path, doc_emb_path, query_emb_path,
        retriever_kind, bm25_k1, bm25_b, encoder_url, synthetic_seed=seed,
    )
    if retriever.kind != "dense":
        _fail("surface probes need the dense retriever")
    by_id = {q.query_id: q for q in queries}
    if query_id not in by_id:
        _fail(f"unknown query id {query_id!r}")
    if not 1 <= target_rank <= len(corpus):
        _fail(f"--target-rank {target_rank} out of range for {len(corpus)} docs")
    query = by_id[query_id]
    q_vec = query.embedding if query.embedding is not None else encoder.embed_text(query.text)
    scores = retriever.all_scores(q_vec)
    target_idx = int(topk_indices(scores, target_rank)[-1])
    t_vec = corpus[target_idx].embedding.astype(np.float64)

    cfg = ProbeConfig(eta=eta, n_directions=n_directions, grid=grid)
    rng = np.random.default_rng(seed)
    d1 = estimate_d1(q_vec, t_vec, cfg, rng)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_scan(name, da, db):
        scan = scan_surface(q_vec, t_vec, da, cfg, rng, d2=db)
        with open(out_dir / f"surface_{name}.csv", "w", encoding="utf-8") as fh:
            fh.write("alpha,beta,score\n")
            for a, b, v in scan.rows():
                fh.write(f"{a!r},{b!r},{v!r}\n")
        return scan

    if planes == "d1d2":
        write_scan("d1d2", d1, None)
    else:
        d2, d3 = orthogonal_directions(d1, 2, rng)
        write_scan("d1d2", d1, d2)
        write_scan("d2d3", d2, d3)
        write_scan("d1d3", d1, d3)
    _log(f"surface scan(s) for {query_id} (target {corpus[target_idx].doc_id}) -> {out_dir}")


@probe.command("slope")
@_data_options
@click.option("--target-rank", type=int, default=100, show_default=True)
@click.option("--eps-slope", type=float, default=0.4, show_default=True)
@click.option("--n-max", type=int, default=5, show_default=True)
@click.option("--pop", type=int, default=24, show_default=True)
@click.option("--gens", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def probe_slope(
    corpus_path, queries_path, table_path, doc_emb_path, query_emb_path, retriever_kind,
    bm25_k1, bm25_b, encoder_url, target_rank, eps_slope, n_max, pop, gens, seed, out_path,
):
    """Pair per-query local slope with the robust-hinge attack's rank shift."""
    corpus, queries, table, retriever, encoder = _load_world(
        corpus_path, queries_path, table_path, doc_emb_path, query_emb_path,
        retriever_kind, bm25_k1, bm25_b, encoder_url, synthetic_seed=seed,
    )
    if retriever.kind != "dense":
        _fail("the slope experiment needs the dense retriever")
    probe_cfg = ProbeConfig(eps_slope=eps_slope)
    de_cfg = DEConfig(pop_size=pop, max_generations=gens, n_max=n_max, variant="fixed_stop", seed=seed)
    try:
        exp = slope_vs_rank_experiment(
            retriever, sorted(queries, key=lambda q: q.query_id), table, target_rank,
            probe_cfg, de_cfg, encoder, seed=seed,
        )
    except DeragError as exc:
        _fail(str(exc))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("query_id,lambda,delta_rank\n")
        for qid, lam, dr in exp.pairs:
            fh.write(f"{qid},{lam!r},{dr}\n")
    _log(f"{len(exp.pairs)} pairs -> {out_path}; pearson r={exp.pearson:.4f} (p={exp.p_value:.3g})")


@main.group()
def report():
    """Aggregate result files into CSV/JSON tables."""


@report.command("summary")
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ks", default="1,10,20", show_default=True)
@click.option("--label", default="", help="Row label (e.g. dataset name).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_summary(results, ks, label, out_path):
    """Headline-table row(s): Success@K, token/iteration costs, rank shifts."""
    ks_list = [int(x) for x in ks.split(",") if x.strip()]
    try:
        rows = [reports.summary_table(reports.read_results([p]), ks_list, label or Path(p).stem) for p in results]
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    if str(out_path).endswith(".json"):
        reports.write_json(out_path, rows)
    else:
        reports.write_csv(out_path, rows)
    _log(f"{len(rows)} summary rows -> {out_path}")


@report.command("complementarity")
@click.argument("suffix_results", type=click.Path(exists=True, dir_okay=False))
@click.argument("prefix_results", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_complementarity(suffix_results, prefix_results, k, out_path):
    """Suffix-only / prefix-only / both / neither counts over Success@k flags."""
    try:
        counts = reports.complementarity_report(
            reports.read_results([suffix_results]), reports.read_results([prefix_results]), k
        )
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    reports.write_json(out_path, counts)
    _log(f"complementarity -> {out_path}: {counts}")


@report.command("curve")
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_curve(results, k, out_path):
    """Cumulative success rate versus allowed suffix length."""
    try:
        curve = reports.curve_report(reports.read_results(results), k)
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    reports.write_csv(out_path, [{"length": length, "cumulative_success": v} for length, v in sorted(curve.items())])
    _log(f"curve -> {out_path}")


@report.command("detector")
@click.argument("samples", type=click.Path(exists=True, dir_okay=False))
@click.option("--target-fprs", default="0.005,0.01,0.02", show_default=True)
@click.option("--low-is-adversarial", is_flag=True, default=False, help="Flip score polarity.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_detector(samples, target_fprs, low_is_adversarial, out_path):
    """Detector thresholds/precision/recall/F1 at target FPRs plus AUROC/AUPRC."""
    fprs = [float(x) for x in target_fprs.split(",") if x.strip()]
    try:
        table = reports.detector_report(samples, fprs, higher_is_adversarial=not low_is_adversarial)
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    reports.write_json(out_path, table)
    _log(f"detector table -> {out_path} (auroc={table['auroc']:.4f}, auprc={table['auprc']:.4f})")


@report.command("fluency")
@click.argument("rows", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_fluency(rows, out_path):
    """Mean PPL / detector-probability table from per-query fluency rows."""
    try:
        data = reports.read_results([rows])
        table = reports.fluency_report(data)
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    reports.write_json(out_path, table)
    _log(f"fluency table -> {out_path}")


@report.command("nll")
@click.argument("pool_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("pool_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def report_nll(pool_a, pool_b, out_path):
    """Welch's t-test between two suffix-NLL samples (one float per line)."""

    def read_floats(path):
        with open(path, "r", encoding="utf-8") as fh:
            return [float(x) for x in fh.read().split()]

    try:
        table = reports.nll_comparison(read_floats(pool_a), read_floats(pool_b))
    except (ValueError, DeragError) as exc:
        _fail(str(exc))
    reports.write_json(out_path, table)
    _log(f"nll comparison -> {out_path}: t={table['t']:.3f} p={table['p']:.3g}")


if __name__ == "__main__":
    main()
