"""Adversarial query-suffix optimization against dense and BM25 retrievers."""

__version__ = "0.1.0"

from .de import AttackResult, DEConfig, run_attack
from .encoder import EncoderClient, EncoderEndpoint, SyntheticEncoder
from .io import Corpus, Document, Query, TokenTable, load_corpus, load_token_table
from .objective import AttackTarget, hinge_loss, success_indicator
from .retrieval import DenseRetriever, SparseRetriever, cosine_sim, rank_of, retrieve_topk, tau_k

__all__ = [
    "__version__",
    "AttackResult",
    "AttackTarget",
    "Corpus",
    "DEConfig",
    "DenseRetriever",
    "Document",
    "EncoderClient",
    "EncoderEndpoint",
    "Query",
    "SparseRetriever",
    "SyntheticEncoder",
    "TokenTable",
    "cosine_sim",
    "hinge_loss",
    "load_corpus",
    "load_token_table",
    "rank_of",
    "retrieve_topk",
    "run_attack",
    "success_indicator",
    "tau_k",
]
