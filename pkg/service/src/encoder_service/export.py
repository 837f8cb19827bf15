"""Token-table export in the shared binary format.

Layout (little-endian): magic ``DERG``, u32 version=1, u32 rows, u32 dim,
rows*dim float32 row-major; surfaces and special flags go to a
``<path>.tokens.jsonl`` sidecar of {"token_id", "surface", "special"} lines.
The attack toolkit loads these files directly, so the bytes written here
must round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import EncoderBackend

MAGIC = b"DERG"
VERSION = 1


def write_token_table(path: str | Path, matrix: np.ndarray, surfaces: list[str], special_ids) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    rows, dim = matrix.shape
    if len(surfaces) != rows:
        raise ValueError(f"{len(surfaces)} surfaces for {rows} rows")
    special = set(int(i) for i in special_ids)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, rows, dim))
        fh.write(matrix.tobytes(order="C"))
    with open(str(path) + ".tokens.jsonl", "w", encoding="utf-8") as fh:
        for tid, surface in enumerate(surfaces):
            fh.write(json.dumps({"token_id": tid, "surface": surface, "special": tid in special},
                                ensure_ascii=False))
            fh.write("\n")


def export_token_table(backend: EncoderBackend, out_path: str | Path) -> int:
    """Write the model's input-embedding table; returns the row count."""
    matrix = backend.token_embedding_matrix()
    write_token_table(out_path, matrix, backend.token_surfaces(), backend.special_token_ids())
    return matrix.shape[0]
