"""Differential evolution over fixed-length token-id sequences.

Candidates are discrete token sequences; mutation lifts each position into
token-embedding space (``emb(a) + F * (emb(b) - emb(c))``), then projects back
to the nearest searchable token by L2 distance, so the population is always
decodable.  Binomial crossover inherits donor positions with probability CR
plus one forced index, and greedy selection keeps the trial on ties.

A stage evolves one fixed length L and halts on three rules: the success
indicator firing for any member (immediate), best loss reaching zero at a
generation boundary, or no best-loss improvement for T consecutive
generations.  The attack variants compose stages:

* ``seq_stop``: lengths 1..n_max, each seeded by right-padding the previous
  best; stops at the first stage whose best ranks the target inside top-k.
* ``fixed_stop``: a single stage at length n_max.
* ``seq``: all lengths 1..n_max with plateau-only stopping; per-stage success
  is recorded for cumulative-success curves.
* ``random``: uniform random suffixes under the same evaluation budget.

Randomness is derived per (stage, generation, individual) from integer seed
material, so results are independent of evaluation order and fully
reproducible from the config seed.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .encoder import MemoizingEncoder
from .errors import TransportError
from .io import TokenTable
from .objective import AttackObjective, AttackTarget
from .retrieval import Retriever


@dataclass
class Individual:
    tokens: np.ndarray
    loss: float | None = None


@dataclass
class Population:
    members: list[Individual]
    generation: int = 0
    best_loss_history: list[float] = field(default_factory=list)

    def best(self) -> Individual:
        evaluated = [m for m in self.members if m.loss is not None]
        return min(evaluated, key=lambda m: m.loss)


@dataclass
class DEConfig:
    pop_size: int = 24
    scale_factor: float = 0.5
    crossover_rate: float = 0.5
    max_generations: int = 120
    patience: int = 10
    n_max: int = 5
    position: str = "suffix"
    variant: str = "seq_stop"
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 4:
            raise ValueError(f"population size must be >= 4, got {self.pop_size}")
        if self.scale_factor <= 0:
            raise ValueError(f"scale factor must be > 0, got {self.scale_factor}")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError(f"crossover rate must be in [0, 1], got {self.crossover_rate}")
        if self.max_generations < 1 or self.patience < 1 or self.n_max < 1:
            raise ValueError("max_generations, patience, and n_max must be >= 1")
        if self.position not in ("suffix", "prefix"):
            raise ValueError(f"position must be suffix or prefix, got {self.position!r}")
        if self.variant not in ("seq_stop", "fixed_stop", "seq", "random"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class StageInfo:
    length: int
    best_loss: float
    rank: int
    success: bool
    generations: int
    evaluations: int
    halted: str

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "best_loss": self.best_loss,
            "rank": self.rank,
            "success": self.success,
            "generations": self.generations,
            "evaluations": self.evaluations,
            "halted": self.halted,
        }


@dataclass
class AttackResult:
    query_id: str
    target_id: str
    variant: str
    position: str
    k: int
    suffix_token_ids: list[int]
    suffix_surfaces: list[str]
    suffix_text: str
    suffix_len: int
    iterations_used: int
    rank_before: int
    rank_after: int
    success_at: dict[int, bool]
    loss_final: float
    cos_before: float | None
    cos_after: float | None
    cos_suffix: float | None
    stages: list[StageInfo]
    wall_time_ms: float
    seed: int
    partial: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        d = {
            "schema": 1,
            "query_id": self.query_id,
            "target_id": self.target_id,
            "variant": self.variant,
            "position": self.position,
            "k": self.k,
            "suffix_token_ids": self.suffix_token_ids,
            "suffix_surfaces": self.suffix_surfaces,
            "suffix_text": self.suffix_text,
            "suffix_len": self.suffix_len,
            "iterations_used": self.iterations_used,
            "rank_before": self.rank_before,
            "rank_after": self.rank_after,
            "success_at": {str(k): v for k, v in sorted(self.success_at.items())},
            "loss_final": self.loss_final,
            "cos_before": self.cos_before,
            "cos_after": self.cos_after,
            "cos_suffix": self.cos_suffix,
            "stages": [s.to_dict() for s in self.stages],
            "wall_time_ms": self.wall_time_ms,
            "seed": self.seed,
            "partial": self.partial,
        }
        if self.error is not None:
            d["error"] = self.error
        return d


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])


def init_population(
    base: Sequence[int],
    length: int,
    pool_ids: np.ndarray,
    pop_size: int,
    rng: np.random.Generator,
) -> Population:
    """Population of ``pop_size`` length-``length`` members, each starting with
    ``base``'s tokens and uniform-random pool tokens in the padded positions."""
    base = np.asarray(list(base), dtype=np.int64)
    if base.shape[0] > length:
        raise ValueError(f"base length {base.shape[0]} exceeds stage length {length}")
    if pool_ids.shape[0] == 0:
        raise ValueError("searchable token pool is empty")
    members = []
    pad = length - base.shape[0]
    for _ in range(pop_size):
        tokens = np.concatenate([base, rng.choice(pool_ids, size=pad, replace=True)]) if pad else base.copy()
        members.append(Individual(tokens=tokens))
    return Population(members=members)


def donor_embedding(
    table: TokenTable,
    tokens_a: np.ndarray,
    tokens_b: np.ndarray,
    tokens_c: np.ndarray,
    scale_factor: float,
) -> np.ndarray:
    """Continuous donor: emb(a) + F * (emb(b) - emb(c)), per position, float64."""
    emb = table.embeddings
    a = emb[np.asarray(tokens_a, dtype=np.int64)].astype(np.float64)
    b = emb[np.asarray(tokens_b, dtype=np.int64)].astype(np.float64)
    c = emb[np.asarray(tokens_c, dtype=np.int64)].astype(np.float64)
    return a + scale_factor * (b - c)


def project_to_pool(donor: np.ndarray, pool_embeddings: np.ndarray, pool_ids: np.ndarray) -> np.ndarray:
    """Nearest searchable token per donor row by L2 distance (ties: lowest id)."""
    idx = kernels.nearest_pool_index(donor, pool_embeddings)
    return pool_ids[idx]


def mutate_donor(
    tokens_a: np.ndarray,
    tokens_b: np.ndarray,
    tokens_c: np.ndarray,
    scale_factor: float,
    table: TokenTable,
    pool_ids: np.ndarray | None = None,
    pool_embeddings: np.ndarray | None = None,
) -> np.ndarray:
    """Donor token sequence: embedding-space arithmetic then pool projection."""
    if pool_ids is None:
        pool_ids = table.searchable_ids
    if pool_embeddings is None:
        pool_embeddings = table.embeddings[pool_ids]
    donor = donor_embedding(table, tokens_a, tokens_b, tokens_c, scale_factor)
    return project_to_pool(donor, pool_embeddings, pool_ids)


def crossover(
    target_tokens: np.ndarray,
    donor_tokens: np.ndarray,
    crossover_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Binomial crossover: donor position when r < CR or at one forced index.

    Draw order is fixed (L uniforms, then the forced index), so a recorded
    rng replays the exact per-position sourcing.
    """
    target_tokens = np.asarray(target_tokens, dtype=np.int64)
    donor_tokens = np.asarray(donor_tokens, dtype=np.int64)
    if target_tokens.shape != donor_tokens.shape:
        raise ValueError("target and donor lengths differ")
    length = target_tokens.shape[0]
    take = rng.random(length) < crossover_rate
    take[int(rng.integers(0, length))] = True
    return np.where(take, donor_tokens, target_tokens)


def select(target: Individual, trial: Individual, loss_fn) -> Individual:
    """Greedy selection: the trial survives iff its loss is <= the target's."""
    if target.loss is None:
        target.loss = loss_fn(target.tokens)
    if trial.loss is None:
        trial.loss = loss_fn(trial.tokens)
    return trial if trial.loss <= target.loss else target


@dataclass
class StageResult:
    best: Individual
    generations: int
    evaluations: int
    halted: str
    history: list[float]


def run_stage(
    base: Sequence[int],
    length: int,
    cfg: DEConfig,
    objective: AttackObjective,
    pool_ids: np.ndarray,
    pool_embeddings: np.ndarray,
    table: TokenTable,
    stage_key: tuple[int, ...],
    stop_on_success: bool,
) -> StageResult:
    """One fixed-length DE stage.  The plateau counter baselines at the
    evaluated initial population, so a constant objective halts after exactly
    ``cfg.patience`` generations."""
    pop = init_population(base, length, pool_ids, cfg.pop_size, _rng(*stage_key, 0xA11CE))
    members = pop.members
    evals = 0
    for ind in members:
        out = objective.evaluate(ind.tokens)
        ind.loss = out.loss
        evals += 1
        if stop_on_success and out.success:
            return StageResult(ind, 0, evals, "success", [out.loss])

    best = min(m.loss for m in members)
    history = [best]
    patience = 0
    generations = 0
    halted = "budget"
    for g in range(1, cfg.max_generations + 1):
        generations = g
        for i in range(cfg.pop_size):
            rng_i = _rng(*stage_key, g, i)
            others = rng_i.choice(cfg.pop_size - 1, size=3, replace=False)
            others = np.where(others >= i, others + 1, others)
            donor = mutate_donor(
                members[others[0]].tokens,
                members[others[1]].tokens,
                members[others[2]].tokens,
                cfg.scale_factor,
                table,
                pool_ids,
                pool_embeddings,
            )
            trial_tokens = crossover(members[i].tokens, donor, cfg.crossover_rate, rng_i)
            out = objective.evaluate(trial_tokens)
            evals += 1
            if stop_on_success and out.success:
                history.append(out.loss)
                pop.generation = g
                pop.best_loss_history = history
                return StageResult(Individual(trial_tokens, out.loss), g, evals, "success", history)
            if out.loss <= members[i].loss:
                members[i] = Individual(trial_tokens, out.loss)
        gen_best = min(m.loss for m in members)
        history.append(gen_best)
        if gen_best < best:
            best = gen_best
            patience = 0
        else:
            patience += 1
        if stop_on_success and best == 0.0:
            halted = "zero_loss"
            break
        if patience >= cfg.patience:
            halted = "plateau"
            break
    pop.generation = generations
    pop.best_loss_history = history
    best_ind = min(members, key=lambda m: m.loss)
    return StageResult(best_ind, generations, evals, halted, history)


def _stage_info(objective: AttackObjective, sr: StageResult, length: int, k: int) -> StageInfo:
    out = objective.evaluate(sr.best.tokens)
    return StageInfo(
        length=length,
        best_loss=sr.best.loss,
        rank=out.rank,
        success=out.rank <= k,
        generations=sr.generations,
        evaluations=sr.evaluations,
        halted=sr.halted,
    )


def run_attack(
    query,
    target: AttackTarget,
    cfg: DEConfig,
    retriever: Retriever,
    encoder=None,
    token_table: TokenTable | None = None,
    pool_ids: np.ndarray | None = None,
    loss: str = "hinge",
    success_mode: str = "literal",
    ks: Sequence[int] = (1, 10, 20),
    random_budget: int | None = None,
) -> AttackResult:
    """Run one attack variant for one (query, target) pair."""
    t0 = time.perf_counter()
    table = token_table if token_table is not None else getattr(encoder, "token_table", None)
    if table is None:
        raise ValueError("a token table is required")
    if pool_ids is None:
        pool_ids = table.searchable_ids
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    if pool_ids.shape[0] == 0:
        raise ValueError("searchable token pool is empty")
    pool_embeddings = np.ascontiguousarray(table.embeddings[pool_ids])

    if encoder is not None and retriever.kind == "dense":
        encoder = MemoizingEncoder(encoder)

    qhash = _stable_hash(target.query.query_id)

    def aborted(exc: TransportError, iterations: int, stages: list[StageInfo]) -> AttackResult:
        # encoder gone: report whatever is known without touching it again;
        # rank fields of 0 mean "unknown" and only appear on partial records
        return AttackResult(
            query_id=target.query.query_id,
            target_id=target.target_doc_id,
            variant=cfg.variant,
            position=cfg.position,
            k=target.k,
            suffix_token_ids=[],
            suffix_surfaces=[],
            suffix_text="",
            suffix_len=0,
            iterations_used=iterations,
            rank_before=0,
            rank_after=0,
            success_at={},
            loss_final=float("inf"),
            cos_before=None,
            cos_after=None,
            cos_suffix=None,
            stages=stages,
            wall_time_ms=(time.perf_counter() - t0) * 1000.0,
            seed=cfg.seed,
            partial=True,
            error=str(exc),
        )

    total_evals = 0
    stages: list[StageInfo] = []
    try:
        objective = AttackObjective(
            target,
            retriever,
            encoder,
            position=cfg.position,
            kind=loss,
            success_mode=success_mode,
            token_table=table,
            rng=_rng(cfg.seed, qhash, 0xB0B),
        )
    except TransportError as exc:
        return aborted(exc, 0, [])

    def finish(tokens: np.ndarray, iterations: int, stages: list[StageInfo]) -> AttackResult:
        out = objective.evaluate(tokens)
        token_list = [int(t) for t in tokens]
        surfaces = [table.surface(t) for t in token_list]
        ks_all = sorted({int(kk) for kk in ks if 1 <= int(kk) <= len(retriever.corpus)} | {target.k})
        cos_before = cos_after = cos_suffix = None
        if retriever.kind == "dense":
            base = objective.evaluate(())
            cos_before = base.target_sim
            cos_after = out.target_sim
            suffix_vec = encoder.embed_suffix(token_list) if token_list else None
            if suffix_vec is not None:
                from .retrieval import cosine_sim

                cos_suffix = cosine_sim(suffix_vec, objective._target_vec)
        return AttackResult(
            query_id=target.query.query_id,
            target_id=target.target_doc_id,
            variant=cfg.variant,
            position=cfg.position,
            k=target.k,
            suffix_token_ids=token_list,
            suffix_surfaces=surfaces,
            suffix_text=table.render(token_list),
            suffix_len=len(token_list),
            iterations_used=iterations,
            rank_before=objective.baseline_rank,
            rank_after=out.rank,
            success_at={kk: out.rank <= kk for kk in ks_all},
            loss_final=out.loss,
            cos_before=cos_before,
            cos_after=cos_after,
            cos_suffix=cos_suffix,
            stages=stages,
            wall_time_ms=(time.perf_counter() - t0) * 1000.0,
            seed=cfg.seed,
        )

    try:
        if cfg.variant == "seq_stop" and objective.baseline_rank <= target.k:
            return finish(np.empty(0, dtype=np.int64), 0, [])

        if cfg.variant == "fixed_stop":
            sr = run_stage(
                (), cfg.n_max, cfg, objective, pool_ids, pool_embeddings, table,
                (cfg.seed, qhash, cfg.n_max), stop_on_success=True,
            )
            stages.append(_stage_info(objective, sr, cfg.n_max, target.k))
            return finish(sr.best.tokens, sr.evaluations, stages)

        if cfg.variant == "random":
            budget = random_budget if random_budget is not None else cfg.pop_size * cfg.max_generations
            if budget < 1:
                raise ValueError(f"random budget must be >= 1, got {budget}")
            rng = _rng(cfg.seed, qhash, 0xF00D)
            best_tokens = None
            best_loss = np.inf
            for _ in range(budget):
                tokens = rng.choice(pool_ids, size=cfg.n_max, replace=True)
                out = objective.evaluate(tokens)
                total_evals += 1
                if out.loss < best_loss:
                    best_loss = out.loss
                    best_tokens = tokens
                if out.success:
                    best_tokens = tokens
                    break
            return finish(best_tokens, total_evals, [])

        # sequential variants
        stop_on_success = cfg.variant == "seq_stop"
        s_star = np.empty(0, dtype=np.int64)
        best_overall: tuple[float, int, np.ndarray] | None = None  # (loss, length, tokens)
        for length in range(1, cfg.n_max + 1):
            sr = run_stage(
                s_star, length, cfg, objective, pool_ids, pool_embeddings, table,
                (cfg.seed, qhash, length), stop_on_success=stop_on_success,
            )
            total_evals += sr.evaluations
            info = _stage_info(objective, sr, length, target.k)
            stages.append(info)
            s_star = sr.best.tokens
            if best_overall is None or sr.best.loss < best_overall[0]:
                best_overall = (sr.best.loss, length, sr.best.tokens)
            if stop_on_success and info.rank <= target.k:
                break
        final_tokens = s_star if stop_on_success else best_overall[2]
        return finish(final_tokens, total_evals, stages)
    except TransportError as exc:
        return aborted(exc, total_evals, stages)
