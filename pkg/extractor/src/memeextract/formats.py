"""Writers for the classifier's public file formats.

These mirror the documented dataset contract (manifest JSON-lines,
indexed float32 embedding blob, node-embedding text table, relevance
score JSON-lines). The extractor deliberately does not import the
classifier package; the byte formats are the interface.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MANIFEST_SCHEMA_VERSION = 1
BLOB_MAGIC = b"KFBLOB1\n"


class BlobWriter:
    def __init__(self):
        self._entries: dict[str, dict] = {}
        self._payload = io.BytesIO()

    def add(self, name: str, vector) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate blob entry {name!r}")
        arr = np.asarray(vector, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"blob entry {name!r} must be a nonempty vector")
        self._entries[name] = {"offset": self._payload.tell(), "dim": int(arr.size)}
        self._payload.write(arr.astype("<f4").tobytes())

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {"schema_version": MANIFEST_SCHEMA_VERSION, "entries": self._entries},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(BLOB_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(self._payload.getvalue())


def write_manifest(path: str | Path, rows: list[dict], dims: dict[str, int]) -> None:
    header = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "manifest",
        "dims": {k: int(v) for k, v in sorted(dims.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def write_node_embeddings(table: dict[str, np.ndarray], path: str | Path) -> None:
    if not table:
        raise ValueError("node-embedding table is empty")
    dims = {len(v) for v in table.values()}
    if len(dims) != 1:
        raise ValueError(f"inconsistent embedding dims: {sorted(dims)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {dims.pop()}\n")
        for label, vector in table.items():
            rendered = " ".join(repr(float(np.float32(v))) for v in vector)
            fh.write(f"{label} {rendered}\n")


def write_scores(rows: list[dict], path: str | Path) -> None:
    """Relevance score file: one {record_id, concept, score} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
