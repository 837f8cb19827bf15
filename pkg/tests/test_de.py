import numpy as np
import pytest

from conftest import make_dense_corpus, make_query, make_token_table
from derag.de import (
    AttackResult,
    DEConfig,
    Individual,
    crossover,
    donor_embedding,
    init_population,
    mutate_donor,
    project_to_pool,
    run_attack,
    run_stage,
    select,
)
from derag.encoder import SyntheticEncoder
from derag.io import Corpus, Document, Query, TokenTable
from derag.objective import AttackObjective, AttackTarget, Outcome
from derag.retrieval import DenseRetriever


class StubObjective:
    """Deterministic stand-in: loss from a callable, success from a callable."""

    def __init__(self, loss_fn, success_fn=lambda tokens: False):
        self.loss_fn = loss_fn
        self.success_fn = success_fn
        self.n_evals = 0

    def evaluate(self, tokens):
        self.n_evals += 1
        loss = self.loss_fn(tuple(int(t) for t in tokens))
        return Outcome(loss=loss, rank=1 if loss == 0 else 999, success=self.success_fn(tokens),
                       target_sim=0.0)


def solvable_world(dim=16, n_docs=30, pool=8, token_norm=2.0, magic=True, seed=0):
    """Corpus plus an equal-norm token table; token 0 points straight at the target.

    Equal norms keep every token reachable by the L2 nearest-neighbor
    projection, and the aligned token makes the instance solvable.
    """
    rng = np.random.default_rng(seed)
    corpus = make_dense_corpus(n_docs, dim, seed=seed + 1)
    target = corpus[n_docs // 2]
    t_unit = target.embedding.astype(np.float64)
    t_unit /= np.linalg.norm(t_unit)
    emb = rng.standard_normal((pool, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    if magic:
        emb[0] = t_unit
    table = TokenTable((emb * token_norm).astype(np.float32), [f"tok{i}" for i in range(pool)])
    query = make_query(dim, seed=seed + 2)
    return corpus, table, query, target


class TestInitPopulation:
    def test_stage_one_fully_random_single_tokens(self):
        table = make_token_table(8, 4, seed=0)
        pop = init_population((), 1, table.searchable_ids, 12, np.random.default_rng(0))
        assert len(pop.members) == 12
        for m in pop.members:
            assert m.tokens.shape == (1,)
            assert int(m.tokens[0]) in set(table.searchable_ids.tolist())

    def test_base_prefix_preserved(self):
        table = make_token_table(8, 4, seed=1)
        pop = init_population([5], 3, table.searchable_ids, 10, np.random.default_rng(1))
        for m in pop.members:
            assert int(m.tokens[0]) == 5
            assert m.tokens.shape == (3,)

    def test_seeded_determinism(self):
        table = make_token_table(8, 4, seed=2)
        a = init_population((), 4, table.searchable_ids, 6, np.random.default_rng(42))
        b = init_population((), 4, table.searchable_ids, 6, np.random.default_rng(42))
        for ma, mb in zip(a.members, b.members):
            np.testing.assert_array_equal(ma.tokens, mb.tokens)

    def test_base_longer_than_stage_rejected(self):
        table = make_token_table(8, 4, seed=3)
        with pytest.raises(ValueError):
            init_population([1, 2, 3], 2, table.searchable_ids, 6, np.random.default_rng(0))


class TestMutation:
    def test_zero_scale_returns_first_parent(self):
        table = make_token_table(10, 4, seed=4)
        pool = table.searchable_ids
        a = np.array([3, 7], dtype=np.int64)
        b = np.array([1, 2], dtype=np.int64)
        c = np.array([5, 9], dtype=np.int64)
        donor = donor_embedding(table, a, b, c, 0.0)
        np.testing.assert_allclose(donor, table.embeddings[a].astype(np.float64), atol=0)
        np.testing.assert_array_equal(project_to_pool(donor, table.embeddings[pool], pool), a)

    def test_continuous_arithmetic(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], dtype=np.float32)
        table = TokenTable(emb, ["a", "b", "c"])
        donor = donor_embedding(table, [0], [1], [2], 0.5)
        np.testing.assert_allclose(donor, [[1.0, 0.5]], atol=1e-12)

    def test_reported_worked_example(self):
        # first three embedding dims of the three parents, scale factor 0.5
        emb = np.zeros((3, 3), dtype=np.float32)
        emb[0] = [-0.045, -0.080, -0.005]
        emb[1] = [-0.011, -0.044, 0.013]
        emb[2] = [-0.022, -0.082, -0.010]
        table = TokenTable(emb, ["pa", "pb", "pc"])
        donor = donor_embedding(table, [0], [1], [2], 0.5)[0]
        np.testing.assert_allclose(donor, [-0.0395, -0.0610, 0.0065], atol=1e-7)
        # the published rounded figures sit within 1e-3 of exact arithmetic
        np.testing.assert_allclose(donor, [-0.0398, -0.0619, 0.0062], atol=1e-3)

    def test_projection_stays_in_pool(self):
        table = make_token_table(20, 6, seed=5, n_special=4)
        pool = table.searchable_ids
        rng = np.random.default_rng(6)
        for _ in range(20):
            picks = rng.choice(pool, size=(3, 3))
            tokens = mutate_donor(picks[0], picks[1], picks[2], 0.8, table, pool, table.embeddings[pool])
            assert all(int(t) in set(pool.tolist()) for t in tokens)
            assert all(int(t) not in table.special_mask for t in tokens)


class TestCrossover:
    def test_cr_one_takes_donor_everywhere(self):
        rng = np.random.default_rng(7)
        target = np.arange(5, dtype=np.int64)
        donor = np.arange(5, dtype=np.int64) + 10
        np.testing.assert_array_equal(crossover(target, donor, 1.0, rng), donor)

    def test_cr_zero_takes_target_except_forced_index(self):
        rng = np.random.default_rng(8)
        target = np.arange(6, dtype=np.int64)
        donor = np.arange(6, dtype=np.int64) + 10
        trial = crossover(target, donor, 0.0, rng)
        donor_positions = np.flatnonzero(trial >= 10)
        assert donor_positions.shape == (1,)

    def test_recorded_rng_oracle(self):
        seed, length, cr = 99, 5, 0.5
        target = np.zeros(length, dtype=np.int64)
        donor = np.ones(length, dtype=np.int64)
        trial = crossover(target, donor, cr, np.random.default_rng(seed))
        # replay the documented draw order: L uniforms then one integer
        ref = np.random.default_rng(seed)
        take = ref.random(length) < cr
        take[int(ref.integers(0, length))] = True
        np.testing.assert_array_equal(trial, np.where(take, donor, target))

    def test_forced_index_guarantees_donor_position(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            target = np.zeros(4, dtype=np.int64)
            donor = np.ones(4, dtype=np.int64)
            trial = crossover(target, donor, 0.0, rng)
            assert trial.sum() >= 1  # at least one donor-sourced position


class TestSelect:
    def test_tie_goes_to_trial(self):
        target = Individual(np.array([1]), loss=0.5)
        trial = Individual(np.array([2]), loss=0.5)
        assert select(target, trial, lambda t: 0.0) is trial

    def test_worse_trial_rejected(self):
        target = Individual(np.array([1]), loss=0.5)
        trial = Individual(np.array([2]), loss=0.7)
        assert select(target, trial, lambda t: 0.0) is target

    def test_survivor_is_min(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            lt, lr = rng.random(), rng.random()
            survivor = select(Individual(np.array([1]), lt), Individual(np.array([2]), lr), None)
            assert survivor.loss == min(lt, lr)


class TestRunStage:
    def _cfg(self, **kw):
        defaults = dict(pop_size=6, max_generations=50, patience=4, n_max=3, seed=0)
        defaults.update(kw)
        return DEConfig(**defaults)

    def test_constant_zero_halts_at_init(self):
        table = make_token_table(8, 4, seed=11)
        obj = StubObjective(lambda tokens: 0.0, success_fn=lambda t: True)
        cfg = self._cfg()
        sr = run_stage((), 2, cfg, obj, table.searchable_ids, table.embeddings, table,
                       (0, 0, 2), stop_on_success=True)
        assert sr.halted == "success"
        assert sr.generations == 0
        assert sr.evaluations == 1  # the very first member fires the rule

    def test_constant_positive_halts_after_exactly_patience_generations(self):
        table = make_token_table(8, 4, seed=12)
        obj = StubObjective(lambda tokens: 1.0)
        cfg = self._cfg(patience=5)
        sr = run_stage((), 2, cfg, obj, table.searchable_ids, table.embeddings, table,
                       (0, 0, 2), stop_on_success=True)
        assert sr.halted == "plateau"
        assert sr.generations == 5
        assert sr.evaluations == cfg.pop_size * (1 + 5)  # init plus one trial per member per generation

    def test_zero_loss_break_without_success_flag(self):
        # loss can reach zero while the success indicator never fires
        table = make_token_table(8, 4, seed=13)
        obj = StubObjective(lambda tokens: 0.0)
        cfg = self._cfg()
        sr = run_stage((), 1, cfg, obj, table.searchable_ids, table.embeddings, table,
                       (0, 0, 1), stop_on_success=True)
        assert sr.halted == "zero_loss"
        assert sr.generations == 1

    def test_best_history_non_increasing_and_solvable_reaches_zero(self):
        corpus, table, query, target = solvable_world(seed=14)
        retriever = DenseRetriever(corpus)
        encoder = SyntheticEncoder(table)
        obj = AttackObjective(AttackTarget(query, target.doc_id, k=3), retriever, encoder)
        cfg = self._cfg(pop_size=8, max_generations=60, patience=8)
        sr = run_stage((), 1, cfg, obj, table.searchable_ids, table.embeddings, table,
                       (1, 2, 1), stop_on_success=False)
        hist = sr.history
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
        assert sr.best.loss == 0.0

    def test_plateau_only_mode_ignores_success(self):
        table = make_token_table(8, 4, seed=15)
        obj = StubObjective(lambda tokens: 1.0, success_fn=lambda t: True)
        cfg = self._cfg(patience=3)
        sr = run_stage((), 1, cfg, obj, table.searchable_ids, table.embeddings, table,
                       (0, 0, 1), stop_on_success=False)
        assert sr.halted == "plateau"
        assert sr.generations == 3


def brute_force_best_loss(objective, table):
    return min(objective.evaluate((int(t),)).loss for t in table.searchable_ids)


class TestRunAttack:
    def _world(self, seed=0, **kw):
        corpus, table, query, target = solvable_world(seed=seed, **kw)
        retriever = DenseRetriever(corpus)
        encoder = SyntheticEncoder(table)
        return corpus, table, query, target, retriever, encoder

    def test_degenerate_target_already_ranked(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=16)
        # query pointing at the target makes it rank 1 with no suffix
        query = Query("q", "text", embedding=target.embedding.astype(np.float64))
        cfg = DEConfig(pop_size=6, n_max=3, variant="seq_stop", seed=1)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=5), cfg, retriever, encoder)
        assert res.suffix_len == 0
        assert res.stages == []
        assert res.iterations_used == 0
        assert res.rank_after <= 5

    def test_fixed_stop_always_full_length(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=17)
        cfg = DEConfig(pop_size=6, max_generations=12, patience=3, n_max=4, variant="fixed_stop", seed=2)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, encoder)
        assert res.suffix_len == 4
        assert res.variant == "fixed_stop"

    def test_seq_stop_matches_exhaustive_oracle_on_pool_8(self):
        for seed in range(5):
            corpus, table, query, target, retriever, encoder = self._world(seed=20 + seed)
            att = AttackTarget(query, target.doc_id, k=3)
            cfg = DEConfig(pop_size=8, max_generations=40, patience=8, n_max=1,
                           variant="seq_stop", seed=seed)
            res = run_attack(query, att, cfg, retriever, encoder)
            oracle = AttackObjective(att, retriever, SyntheticEncoder(table))
            best = brute_force_best_loss(oracle, table)
            assert res.loss_final == pytest.approx(best, abs=1e-12)

    def test_full_determinism(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=30)
        cfg = DEConfig(pop_size=6, max_generations=15, patience=4, n_max=3, variant="seq", seed=7)
        r1 = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, SyntheticEncoder(table))
        r2 = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, SyntheticEncoder(table))
        d1, d2 = r1.to_dict(), r2.to_dict()
        d1.pop("wall_time_ms"), d2.pop("wall_time_ms")
        assert d1 == d2

    def test_no_special_tokens_in_output(self):
        rng = np.random.default_rng(31)
        corpus = make_dense_corpus(20, 5, seed=32)
        emb = rng.standard_normal((12, 5)).astype(np.float32)
        table = TokenTable(emb, [f"t{i}" for i in range(12)], special_mask=[0, 1, 2, 3])
        encoder = SyntheticEncoder(table)
        retriever = DenseRetriever(corpus)
        query = make_query(5, seed=33)
        cfg = DEConfig(pop_size=6, max_generations=10, patience=3, n_max=3, variant="fixed_stop", seed=3)
        res = run_attack(query, AttackTarget(query, corpus[7].doc_id, k=2), cfg, retriever, encoder)
        assert all(t not in table.special_mask for t in res.suffix_token_ids)

    def test_seq_stop_returns_minimal_successful_length(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=34)
        cfg = DEConfig(pop_size=8, max_generations=40, patience=8, n_max=4, variant="seq_stop", seed=4)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, encoder)
        successful = [s for s in res.stages if s.success]
        if successful:
            assert res.suffix_len == min(s.length for s in successful)

    def test_seq_records_every_stage(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=35)
        cfg = DEConfig(pop_size=6, max_generations=10, patience=3, n_max=3, variant="seq", seed=5)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, encoder)
        assert [s.length for s in res.stages] == [1, 2, 3]

    def test_random_baseline_budget(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=36, magic=False)
        cfg = DEConfig(pop_size=5, max_generations=8, n_max=2, variant="random", seed=6)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=1), cfg, retriever, encoder)
        assert res.iterations_used <= 5 * 8
        assert res.suffix_len == 2

    def test_result_roundtrips_to_dict(self):
        corpus, table, query, target, retriever, encoder = self._world(seed=37)
        cfg = DEConfig(pop_size=6, max_generations=8, patience=3, n_max=2, variant="fixed_stop", seed=8)
        res = run_attack(query, AttackTarget(query, target.doc_id, k=3), cfg, retriever, encoder)
        d = res.to_dict()
        assert d["schema"] == 1
        assert d["suffix_len"] == len(d["suffix_token_ids"])
        assert set(d["success_at"]) >= {"1", "3"}
