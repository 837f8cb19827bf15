"""Clients for the encoder sidecar plus a deterministic synthetic encoder.

Every client implements the same surface:

* ``embed_batch(texts)``: one vector per text, order preserved.
* ``embed_tokens(query, token_ids, position)``: embedding of the query with
  the rendered tokens appended (``suffix``) or prepended (``prefix``).
* ``embed_suffix(token_ids)``: embedding of the rendered tokens alone.
* ``mlm_candidates(text, tail_len, top_k)``: (token_id, prob) descending.
* ``nll_and_ppl(texts)``: (nll, ppl) per text with ppl == exp(nll).

``calls`` counts real encoder computations; :class:`MemoizingEncoder` wraps a
client with a per-attack-run cache so repeated token sequences cost nothing.
"""

from __future__ import annotations

import hashlib
import math
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import ProtocolError, TransportError
from .io import Query, TokenTable


def merge_wordpieces(surfaces: Sequence[str]) -> str:
    """Join token surfaces into text; ``##`` pieces attach to the left token."""
    parts: list[str] = []
    for s in surfaces:
        if s.startswith("##") and parts:
            parts[-1] += s[2:]
        else:
            parts.append(s)
    return " ".join(parts)


def attack_text(query_text: str, rendered: str, position: str) -> str:
    if position not in ("suffix", "prefix"):
        raise ValueError(f"position must be suffix or prefix, got {position!r}")
    if not rendered:
        return query_text
    if position == "suffix":
        return f"{query_text} {rendered}"
    return f"{rendered} {query_text}"


@dataclass
class EncoderEndpoint:
    base_url: str
    timeout_ms: int = 30_000
    max_batch: int = 32
    retries: int = 2

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")


class EncoderClient:
    """HTTP client for the encoder wire protocol.

    Oversize batches are split transparently; transient transport failures
    retry up to ``endpoint.retries`` times before raising
    :class:`TransportError`.
    """

    def __init__(self, endpoint: EncoderEndpoint | str, token_table: TokenTable | None = None):
        if isinstance(endpoint, str):
            endpoint = EncoderEndpoint(base_url=endpoint)
        self.endpoint = endpoint
        self.token_table = token_table
        self.calls = 0
        self._session = requests.Session()

    def _post(self, route: str, payload: dict) -> dict:
        url = self.endpoint.base_url.rstrip("/") + route
        timeout = self.endpoint.timeout_ms / 1000.0
        last_exc: Exception | None = None
        for _ in range(self.endpoint.retries + 1):
            try:
                resp = self._session.post(url, json=payload, timeout=timeout)
                self.calls += 1
                if resp.status_code != 200:
                    raise ProtocolError(f"{route} returned HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_exc = exc
        raise TransportError(f"{url} unreachable after {self.endpoint.retries + 1} attempts: {last_exc}")

    def info(self) -> dict:
        url = self.endpoint.base_url.rstrip("/") + "/info"
        try:
            resp = self._session.get(url, timeout=self.endpoint.timeout_ms / 1000.0)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransportError(f"{url} unreachable: {exc}") from exc
        return resp.json()

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            return []
        out: list[np.ndarray] = []
        dim: int | None = None
        for start in range(0, len(texts), self.endpoint.max_batch):
            chunk = texts[start : start + self.endpoint.max_batch]
            body = self._post("/embed", {"texts": chunk})
            vecs = body.get("embeddings")
            if vecs is None or len(vecs) != len(chunk):
                raise ProtocolError(f"/embed returned {0 if vecs is None else len(vecs)} vectors for {len(chunk)} texts")
            if dim is None:
                dim = int(body.get("dim", len(vecs[0]) if vecs else 0))
            for v in vecs:
                if len(v) != dim:
                    raise ProtocolError(f"/embed vector of dim {len(v)}, expected {dim}")
                out.append(np.asarray(v, dtype=np.float64))
        return out

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def _render(self, token_ids: Sequence[int]) -> str:
        if self.token_table is None:
            raise ValueError("token_table required to render token ids")
        return merge_wordpieces([self.token_table.surface(int(t)) for t in token_ids])

    def embed_tokens(self, query: Query, token_ids: Sequence[int], position: str = "suffix") -> np.ndarray:
        return self.embed_text(attack_text(query.text, self._render(token_ids), position))

    def embed_suffix(self, token_ids: Sequence[int]) -> np.ndarray | None:
        if not len(token_ids):
            return None
        return self.embed_text(self._render(token_ids))

    def mlm_candidates(self, text: str, tail_len: int, top_k: int) -> list[tuple[int, float]]:
        if top_k == 0:
            return []
        body = self._post("/mlm_fill", {"text": text, "tail_len": int(tail_len), "top_k": int(top_k)})
        cands = body.get("candidates")
        if cands is None:
            raise ProtocolError("/mlm_fill reply lacks candidates")
        out: list[tuple[int, float]] = []
        prev = math.inf
        for c in cands:
            prob = float(c["prob"])
            if not 0.0 < prob <= 1.0:
                raise ProtocolError(f"/mlm_fill prob {prob} outside (0, 1]")
            if prob > prev:
                raise ProtocolError("/mlm_fill probs not descending")
            prev = prob
            out.append((int(c["token_id"]), prob))
        return out

    def nll_and_ppl(self, texts: Sequence[str]) -> list[tuple[float, float]]:
        texts = list(texts)
        if not texts:
            return []
        out: list[tuple[float, float]] = []
        for start in range(0, len(texts), self.endpoint.max_batch):
            chunk = texts[start : start + self.endpoint.max_batch]
            body = self._post("/nll", {"texts": chunk})
            nlls, ppls = body.get("nll"), body.get("ppl")
            if nlls is None or ppls is None or len(nlls) != len(chunk) or len(ppls) != len(chunk):
                raise ProtocolError("/nll reply shape mismatch")
            for nll, ppl in zip(nlls, ppls):
                nll, ppl = float(nll), float(ppl)
                if not math.isclose(ppl, math.exp(nll), rel_tol=1e-6, abs_tol=1e-6):
                    raise ProtocolError(f"ppl {ppl} inconsistent with exp(nll) {math.exp(nll)}")
                out.append((nll, ppl))
        return out


def _hash_seed(*parts: str) -> int:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class SyntheticEncoder:
    """Deterministic additive encoder used for tests and offline experiments.

    ``embed_tokens`` returns ``normalize(M(q) + sum of token embeddings)``, so
    appending a token aligned with a target document's direction strictly
    raises cosine similarity to that target: attack instances are solvable
    by construction.  Base texts embed via the registry when known, otherwise
    via a hash-seeded unit Gaussian, so every output is reproducible.
    """

    def __init__(self, token_table: TokenTable, dim: int | None = None, seed: int = 0):
        self.token_table = token_table
        self.dim = int(dim if dim is not None else token_table.dim)
        if self.dim != token_table.dim:
            raise ValueError(f"dim {self.dim} != token table dim {token_table.dim}")
        self.seed = int(seed)
        self._known: dict[str, np.ndarray] = {}
        self.calls = 0

    def register(self, text: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {vector.shape}")
        self._known[text] = vector

    def _base_vector(self, text: str) -> np.ndarray:
        vec = self._known.get(text)
        if vec is not None:
            return vec
        rng = np.random.default_rng([self.seed, _hash_seed(text)])
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    @staticmethod
    def _normalize(v: np.ndarray) -> np.ndarray:
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ProtocolError("synthetic embedding collapsed to zero")
        return v / n

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        self.calls += len(texts)
        return [self._normalize(self._base_vector(t)) for t in texts]

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_tokens(self, query: Query, token_ids: Sequence[int], position: str = "suffix") -> np.ndarray:
        if position not in ("suffix", "prefix"):
            raise ValueError(f"position must be suffix or prefix, got {position!r}")
        self.calls += 1
        base = query.embedding if query.embedding is not None else self._base_vector(query.text)
        v = np.asarray(base, dtype=np.float64).copy()
        for tid in token_ids:
            v += self.token_table.embeddings[int(tid)].astype(np.float64)
        return self._normalize(v)

    def embed_suffix(self, token_ids: Sequence[int]) -> np.ndarray | None:
        if not len(token_ids):
            return None
        self.calls += 1
        v = np.zeros(self.dim, dtype=np.float64)
        for tid in token_ids:
            v += self.token_table.embeddings[int(tid)].astype(np.float64)
        return self._normalize(v)

    def mlm_candidates(self, text: str, tail_len: int, top_k: int) -> list[tuple[int, float]]:
        if top_k == 0:
            return []
        self.calls += 1
        vocab = len(self.token_table)
        rng = np.random.default_rng([self.seed, _hash_seed("mlm", text, str(tail_len))])
        logits = rng.standard_normal(vocab)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        order = np.lexsort((np.arange(vocab), -probs))[: min(top_k, vocab)]
        return [(int(i), float(probs[i])) for i in order]

    def nll_and_ppl(self, texts: Sequence[str]) -> list[tuple[float, float]]:
        self.calls += len(texts)
        out = []
        for t in texts:
            rng = np.random.default_rng([self.seed, _hash_seed("nll", t)])
            nll = float(rng.uniform(1.0, 9.0))
            out.append((nll, math.exp(nll)))
        return out


class MemoizingEncoder:
    """Per-attack-run memo over ``embed_tokens``; safe for concurrent use.

    The cache changes call counts only, never results.  Key is
    (query_id, position, token ids).
    """

    def __init__(self, inner):
        self.inner = inner
        self._memo: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self.inner.calls

    def embed_tokens(self, query: Query, token_ids: Sequence[int], position: str = "suffix") -> np.ndarray:
        key = (query.query_id, position, tuple(int(t) for t in token_ids))
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        vec = self.inner.embed_tokens(query, token_ids, position)
        with self._lock:
            self._memo.setdefault(key, vec)
        return vec

    def __getattr__(self, name):
        return getattr(self.inner, name)


def wall_time_ms() -> float:
    return time.perf_counter() * 1000.0
