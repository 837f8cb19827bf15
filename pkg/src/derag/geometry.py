"""Score-field geometry around a query embedding.

Estimates the steepest cosine direction by finite differences over sampled
unit vectors, scans the score surface over a 2-D plane through the query,
measures the isotropic local slope under Gaussian perturbation, and pairs
that slope with attack-induced rank shifts to test whether smoothness
predicts attackability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .de import DEConfig, run_attack
from .errors import DegenerateInputError
from .io import Query, TokenTable
from .metrics import pearson_p, pearson_r
from .objective import AttackTarget
from .retrieval import DenseRetriever, cosine_sim, topk_indices


@dataclass
class ProbeConfig:
    eta: float = 1e-3
    n_directions: int = 512
    eps_slope: float = 0.4
    grid: int = 41
    n_pert: int = 12
    eps_noise: float = 0.2

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.grid < 2:
            raise ValueError(f"grid must be >= 2, got {self.grid}")
        if self.n_directions < 1:
            raise ValueError(f"n_directions must be >= 1, got {self.n_directions}")


def directional_derivative(
    q: np.ndarray, target: np.ndarray, u: np.ndarray, eta: float, scheme: str = "central"
) -> float:
    """Finite-difference derivative of cos(q, target) along unit direction u.

    The central scheme has O(eta^2) truncation error and matches the closed
    form within 1e-4 at eta=1e-3 on unit-scale inputs; ``forward`` is the
    one-sided ratio the steepest-direction scan maximizes.
    """
    if scheme == "central":
        return (cosine_sim(q + eta * u, target) - cosine_sim(q - eta * u, target)) / (2 * eta)
    if scheme == "forward":
        return (cosine_sim(q + eta * u, target) - cosine_sim(q, target)) / eta
    raise ValueError(f"unknown scheme {scheme!r}")


def cosine_gradient(q: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Closed-form gradient of cos(q, d) with respect to q."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(target, dtype=np.float64)
    nq = np.linalg.norm(q)
    nd = np.linalg.norm(d)
    if nq == 0.0 or nd == 0.0:
        raise DegenerateInputError("gradient undefined for a zero vector")
    cos = float(np.dot(q, d) / (nq * nd))
    return d / (nq * nd) - cos * q / (nq * nq)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateInputError("zero direction")
    return v / n


def estimate_d1(
    q: np.ndarray,
    target: np.ndarray,
    config: ProbeConfig,
    rng: np.random.Generator,
    extra_directions: Sequence[np.ndarray] = (),
) -> np.ndarray:
    """Sampled unit direction maximizing the finite-difference cosine derivative.

    ``extra_directions`` joins the random sample, e.g. to check the analytic
    gradient wins the argmax.
    """
    q = np.asarray(q, dtype=np.float64)
    dim = q.shape[0]
    candidates = [_unit(rng.standard_normal(dim)) for _ in range(config.n_directions)]
    candidates.extend(_unit(np.asarray(u, dtype=np.float64)) for u in extra_directions)
    derivs = [directional_derivative(q, target, u, config.eta, scheme="forward") for u in candidates]
    return candidates[int(np.argmax(derivs))]


def orthogonal_directions(
    d1: np.ndarray, count: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Gram-Schmidt unit vectors orthogonal to d1 (and to each other)."""
    basis = [_unit(np.asarray(d1, dtype=np.float64))]
    out: list[np.ndarray] = []
    dim = basis[0].shape[0]
    if count > dim - 1:
        raise DegenerateInputError(f"cannot draw {count} orthogonal directions in dim {dim}")
    while len(out) < count:
        v = rng.standard_normal(dim)
        for b in basis:
            v = v - np.dot(v, b) * b
        n = np.linalg.norm(v)
        if n < 1e-9:
            continue
        v = v / n
        basis.append(v)
        out.append(v)
    return out


@dataclass
class SurfaceScan:
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray  # shape (len(alphas), len(betas))
    d1: np.ndarray
    d2: np.ndarray

    def rows(self):
        """Flattened (alpha, beta, score) rows, alpha-major."""
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                yield float(a), float(b), float(self.values[i, j])


def scan_surface(
    q: np.ndarray,
    target: np.ndarray,
    d1: np.ndarray,
    config: ProbeConfig,
    rng: np.random.Generator,
    d2: np.ndarray | None = None,
) -> SurfaceScan:
    """cos(q + alpha*d1 + beta*d2, target) over the [-1, 1]^2 grid."""
    q = np.asarray(q, dtype=np.float64)
    d1 = _unit(np.asarray(d1, dtype=np.float64))
    if d2 is None:
        d2 = orthogonal_directions(d1, 1, rng)[0]
    else:
        d2 = _unit(np.asarray(d2, dtype=np.float64))
    alphas = np.linspace(-1.0, 1.0, config.grid)
    betas = np.linspace(-1.0, 1.0, config.grid)
    values = np.empty((config.grid, config.grid), dtype=np.float64)
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            values[i, j] = cosine_sim(q + a * d1 + b * d2, target)
    return SurfaceScan(alphas=alphas, betas=betas, values=values, d1=d1, d2=d2)


def local_slope(
    q: np.ndarray, target: np.ndarray, eps: float, rng: np.random.Generator
) -> float:
    """|cos(q+delta, t) - cos(q, t)| / ||delta|| for one delta ~ N(0, eps^2 I)."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    q = np.asarray(q, dtype=np.float64)
    delta = rng.normal(0.0, eps, size=q.shape[0])
    return abs(cosine_sim(q + delta, target) - cosine_sim(q, target)) / float(
        np.linalg.norm(delta)
    )


def local_slope_mean(
    q: np.ndarray, target: np.ndarray, eps: float, rng: np.random.Generator, n: int
) -> float:
    """Convenience batch mean of the single-draw local slope."""
    return float(np.mean([local_slope(q, target, eps, rng) for _ in range(n)]))


@dataclass
class SlopeRankExperiment:
    pairs: list[tuple[str, float, int]]  # (query_id, lambda, delta_rank)
    pearson: float
    p_value: float


def slope_vs_rank_experiment(
    retriever: DenseRetriever,
    queries: Sequence[Query],
    table: TokenTable,
    target_rank: int,
    probe_cfg: ProbeConfig,
    de_cfg: DEConfig,
    encoder,
    seed: int = 0,
    attack_runner: Callable[[Query, str], int] | None = None,
) -> SlopeRankExperiment:
    """Per query: attack the fixed-rank negative with the robust-hinge DE
    objective, record the rank improvement, and pair it with the isotropic
    local slope.  Returns the pairs with their Pearson correlation.

    ``attack_runner(query, target_doc_id) -> rank_after`` may replace the DE
    run (used by tests and dry sweeps).
    """
    corpus = retriever.corpus
    if not 1 <= target_rank <= len(corpus):
        raise ValueError(f"target_rank={target_rank} out of range for {len(corpus)} docs")
    pairs: list[tuple[str, float, int]] = []
    for i, query in enumerate(queries):
        q_vec = query.embedding
        if q_vec is None:
            q_vec = encoder.embed_text(query.text)
        scores = retriever.all_scores(q_vec)
        target_idx = int(topk_indices(scores, target_rank)[-1])
        target_id = corpus[target_idx].doc_id
        t_vec = corpus[target_idx].embedding.astype(np.float64)

        slope_rng = np.random.default_rng([seed, 0x51095, i])
        lam = local_slope(q_vec, t_vec, probe_cfg.eps_slope, slope_rng)

        if attack_runner is not None:
            rank_after = attack_runner(query, target_id)
        else:
            target = AttackTarget(query=query, target_doc_id=target_id, k=10)
            result = run_attack(
                query,
                target,
                de_cfg,
                retriever,
                encoder,
                token_table=table,
                loss="robust_hinge",
            )
            rank_after = result.rank_after
        pairs.append((query.query_id, lam, target_rank - rank_after))

    lams = [p[1] for p in pairs]
    dranks = [float(p[2]) for p in pairs]
    r = pearson_r(lams, dranks)
    return SlopeRankExperiment(pairs=pairs, pearson=r, p_value=pearson_p(r, len(pairs)))
