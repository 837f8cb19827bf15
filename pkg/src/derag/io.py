"""Corpus, query, embedding-matrix, and token-table persistence.

File formats:

* Corpus: JSONL, one ``{"doc_id": str, "text": str}`` object per line.
* Embedding matrix: little-endian binary: magic ``DERG``, u32 version=1,
  u32 rows, u32 dim, then rows*dim float32 row-major.  A JSONL sidecar at
  ``<path>.ids.jsonl`` maps row index to id: ``{"row": int, "id": str}``.
* Token table: the same binary format with a ``<path>.tokens.jsonl`` sidecar
  of ``{"token_id": int, "surface": str, "special": bool}`` lines.

Loaded structures are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CorpusFormatError, MatrixFormatError

MAGIC = b"DERG"
VERSION = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Default term tokenizer: lowercase, split on non-alphanumerics."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Document:
    doc_id: str
    text: str
    embedding: np.ndarray | None = None
    term_freqs: dict[str, int] = field(default_factory=dict)
    length: int = 0


@dataclass
class Query:
    query_id: str
    text: str
    embedding: np.ndarray | None = None


class Corpus:
    """Ordered document collection with O(1) lookup by doc_id."""

    def __init__(self, docs: Sequence[Document]):
        self.docs = list(docs)
        self._by_id: dict[str, int] = {}
        for i, doc in enumerate(self.docs):
            if doc.doc_id in self._by_id:
                raise CorpusFormatError(f"duplicate doc_id {doc.doc_id!r}")
            self._by_id[doc.doc_id] = i
        dims = {doc.embedding.shape[0] for doc in self.docs if doc.embedding is not None}
        if len(dims) > 1:
            raise MatrixFormatError(f"inconsistent embedding dimensions: {sorted(dims)}")
        self.dim: int | None = dims.pop() if dims else None
        lengths = [doc.length for doc in self.docs]
        self.avg_doc_len: float = float(np.mean(lengths)) if lengths else 0.0

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    def __getitem__(self, i: int) -> Document:
        return self.docs[i]

    def index_of(self, doc_id: str) -> int:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id {doc_id!r}") from None

    def doc(self, doc_id: str) -> Document:
        return self.docs[self.index_of(doc_id)]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def embedding_matrix(self) -> np.ndarray:
        """Stacked (n, dim) float32 matrix; requires every document embedded."""
        missing = [d.doc_id for d in self.docs if d.embedding is None]
        if missing:
            raise ValueError(f"{len(missing)} documents lack embeddings (first: {missing[0]!r})")
        return np.stack([d.embedding for d in self.docs]).astype(np.float32, copy=False)


def load_corpus(path: str | Path, tokenizer: Callable[[str], list[str]] | None = None) -> Corpus:
    """Load a JSONL corpus, preserving file order.

    Raises :class:`CorpusFormatError` naming the 1-based line number on
    malformed lines and on duplicate doc_ids.
    """
    tok = tokenizer or tokenize
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "doc_id" not in obj or "text" not in obj:
                raise CorpusFormatError(f"line {lineno}: expected object with doc_id and text")
            doc_id = str(obj["doc_id"])
            if doc_id in seen:
                raise CorpusFormatError(
                    f"line {lineno}: duplicate doc_id {doc_id!r} (first seen on line {seen[doc_id]})"
                )
            seen[doc_id] = lineno
            text = str(obj["text"])
            terms = tok(text)
            freqs: dict[str, int] = {}
            for t in terms:
                freqs[t] = freqs.get(t, 0) + 1
            docs.append(Document(doc_id=doc_id, text=text, term_freqs=freqs, length=len(terms)))
    return Corpus(docs)


def save_corpus(path: str | Path, corpus: Corpus) -> None:
    """Write a corpus back out in canonical JSONL form."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text}, ensure_ascii=False))
            fh.write("\n")


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if "query_id" not in obj or "text" not in obj:
                raise CorpusFormatError(f"line {lineno}: expected object with query_id and text")
            qid = str(obj["query_id"])
            if qid in seen:
                raise CorpusFormatError(
                    f"line {lineno}: duplicate query_id {qid!r} (first seen on line {seen[qid]})"
                )
            seen[qid] = lineno
            queries.append(Query(query_id=qid, text=str(obj["text"])))
    return queries


# -- binary embedding matrices ---------------------------------------------------


def _ids_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".ids.jsonl")


def _tokens_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".tokens.jsonl")


def save_embedding_matrix(path: str | Path, matrix: np.ndarray, ids: Sequence[str]) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {matrix.shape}")
    rows, dim = matrix.shape
    if len(ids) != rows:
        raise ValueError(f"{len(ids)} ids for {rows} rows")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, rows, dim))
        fh.write(matrix.tobytes(order="C"))
    with open(_ids_sidecar(path), "w", encoding="utf-8") as fh:
        for i, ident in enumerate(ids):
            fh.write(json.dumps({"row": i, "id": str(ident)}, ensure_ascii=False))
            fh.write("\n")


def _read_matrix_payload(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise MatrixFormatError(f"{path}: file shorter than the 16-byte header")
    if raw[:4] != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, rows, dim = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise MatrixFormatError(f"{path}: dim is 0")
    expected = rows * dim * 4
    payload = raw[16:]
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise MatrixFormatError(
            f"{path}: {kind} payload, expected {expected} bytes for {rows}x{dim}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()


def load_embedding_matrix(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Load a binary matrix plus its row->id sidecar."""
    matrix = _read_matrix_payload(path)
    sidecar = _ids_sidecar(path)
    if not sidecar.exists():
        raise MatrixFormatError(f"missing id sidecar {sidecar}")
    ids: list[str] = []
    with open(sidecar, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("row") != len(ids):
                raise MatrixFormatError(f"{sidecar}: line {lineno}: rows out of order")
            ids.append(str(obj["id"]))
    if len(ids) != matrix.shape[0]:
        raise MatrixFormatError(
            f"{sidecar}: {len(ids)} ids for {matrix.shape[0]} matrix rows"
        )
    return matrix, ids


def attach_embeddings(corpus: Corpus, matrix: np.ndarray, ids: Sequence[str]) -> None:
    """Assign matrix rows to corpus documents by id.  Every doc must be covered."""
    by_id = {ident: i for i, ident in enumerate(ids)}
    for doc in corpus:
        row = by_id.get(doc.doc_id)
        if row is None:
            raise MatrixFormatError(f"no embedding row for doc_id {doc.doc_id!r}")
        doc.embedding = matrix[row]
    corpus.dim = int(matrix.shape[1])


def attach_query_embeddings(queries: Iterable[Query], matrix: np.ndarray, ids: Sequence[str]) -> None:
    by_id = {ident: i for i, ident in enumerate(ids)}
    for q in queries:
        row = by_id.get(q.query_id)
        if row is None:
            raise MatrixFormatError(f"no embedding row for query_id {q.query_id!r}")
        q.embedding = matrix[row]


# -- token tables -----------------------------------------------------------------


class TokenTable:
    """Vocabulary of token ids, surfaces, and per-token embedding rows.

    Token ids are dense: id i owns row i of ``embeddings`` and ``surfaces[i]``.
    ``special_mask`` ids are excluded from the searchable pool.
    """

    def __init__(
        self,
        embeddings: np.ndarray,
        surfaces: Sequence[str],
        special_mask: Iterable[int] = (),
    ):
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2:
            raise ValueError(f"expected 2-D token embeddings, got {self.embeddings.shape}")
        if len(surfaces) != self.embeddings.shape[0]:
            raise ValueError(f"{len(surfaces)} surfaces for {self.embeddings.shape[0]} rows")
        self.surfaces = list(surfaces)
        self.special_mask = frozenset(int(i) for i in special_mask)
        bad = [i for i in self.special_mask if not 0 <= i < len(self.surfaces)]
        if bad:
            raise ValueError(f"special ids outside the vocabulary: {bad}")
        self.searchable_ids = np.array(
            [i for i in range(len(self.surfaces)) if i not in self.special_mask], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def render(self, token_ids: Sequence[int]) -> str:
        """Join surfaces into text; ``##`` continuation pieces attach left."""
        parts: list[str] = []
        for tid in token_ids:
            s = self.surfaces[int(tid)]
            if s.startswith("##") and parts:
                parts[-1] += s[2:]
            else:
                parts.append(s)
        return " ".join(parts)


def save_token_table(
    path: str | Path,
    embeddings: np.ndarray,
    surfaces: Sequence[str],
    special_ids: Iterable[int] = (),
) -> None:
    special = set(int(i) for i in special_ids)
    save_embedding_matrix(path, embeddings, [str(i) for i in range(len(surfaces))])
    # matrix ids sidecar is redundant for token tables; the tokens sidecar is canonical
    _ids_sidecar(path).unlink()
    with open(_tokens_sidecar(path), "w", encoding="utf-8") as fh:
        for i, surf in enumerate(surfaces):
            fh.write(
                json.dumps(
                    {"token_id": i, "surface": surf, "special": i in special}, ensure_ascii=False
                )
            )
            fh.write("\n")


def load_token_table(path: str | Path, extra_special_surfaces: Iterable[str] = ()) -> TokenTable:
    """Load a binary token table plus its surface sidecar.

    ``extra_special_surfaces`` lets a config flag additional surfaces as
    special on top of the sidecar's own markings.
    """
    matrix = _read_matrix_payload(path)
    sidecar = _tokens_sidecar(path)
    if not sidecar.exists():
        raise MatrixFormatError(f"missing surface sidecar {sidecar}")
    surfaces: list[str] = []
    special: set[int] = set()
    with open(sidecar, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("token_id") != len(surfaces):
                raise MatrixFormatError(f"{sidecar}: line {lineno}: token ids not dense")
            surfaces.append(str(obj["surface"]))
            if obj.get("special"):
                special.add(len(surfaces) - 1)
    if len(surfaces) != matrix.shape[0]:
        raise MatrixFormatError(f"{sidecar}: {len(surfaces)} surfaces for {matrix.shape[0]} rows")
    extras = set(extra_special_surfaces)
    if extras:
        for i, surf in enumerate(surfaces):
            if surf in extras:
                special.add(i)
    return TokenTable(matrix, surfaces, special)
