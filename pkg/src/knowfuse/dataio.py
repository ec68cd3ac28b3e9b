"""Dataset contracts: the record manifest, embedding blobs, and the
node-embedding table.

These formats are the public boundary between the core and the
embedding extractor. Embeddings are stored as little-endian 32-bit
floats on disk and widened to 64-bit on load. Everything is versioned
through an explicit ``schema_version`` field.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, LookupMissingError

MANIFEST_SCHEMA_VERSION = 1
BLOB_MAGIC = b"KFBLOB1\n"
EMBEDDING_FIELDS = ("e_img", "e_txt", "w_caption", "context_vec")
REQUIRED_EMBEDDING_FIELDS = ("e_img", "e_txt", "context_vec")


class BlobWriter:
    """Accumulates named vectors and writes one indexed binary blob."""

    def __init__(self):
        self._entries: dict[str, dict] = {}
        self._payload = io.BytesIO()

    def add(self, name: str, vector) -> None:
        if name in self._entries:
            raise DataError(f"duplicate blob entry {name!r}")
        arr = np.asarray(vector, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError(f"blob entry {name!r} must be a nonempty vector")
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


class BlobReader:
    """Random access into an embedding blob; the index is read once."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            magic = fh.read(len(BLOB_MAGIC))
            if magic != BLOB_MAGIC:
                raise DataError(f"{self.path}: not an embedding blob")
            (header_len,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(header_len).decode("utf-8"))
            self._payload_start = fh.tell()
            fh.seek(0, io.SEEK_END)
            payload_bytes = fh.tell() - self._payload_start
        if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise DataError(f"{self.path}: unsupported blob schema")
        self.entries: dict[str, dict] = header["entries"]
        for name, entry in self.entries.items():
            end = entry["offset"] + 4 * entry["dim"]
            if entry["dim"] <= 0 or end > payload_bytes:
                raise DataError(f"{self.path}: entry {name!r} exceeds payload")

    def dim(self, name: str) -> int:
        entry = self.entries.get(name)
        if entry is None:
            raise LookupMissingError(f"{self.path}: no blob entry {name!r}")
        return entry["dim"]

    def read(self, name: str) -> np.ndarray:
        entry = self.entries.get(name)
        if entry is None:
            raise LookupMissingError(f"{self.path}: no blob entry {name!r}")
        with open(self.path, "rb") as fh:
            fh.seek(self._payload_start + entry["offset"])
            raw = fh.read(4 * entry["dim"])
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


@dataclass
class EmbeddingRef:
    blob: str | None = None
    key: str | None = None
    inline: list[float] | None = None

    @classmethod
    def parse(cls, obj, where: str) -> "EmbeddingRef":
        if not isinstance(obj, dict):
            raise DataError(f"{where}: embedding ref must be an object")
        if "inline" in obj:
            values = obj["inline"]
            if not isinstance(values, list) or not values:
                raise DataError(f"{where}: inline embedding must be a nonempty array")
            return cls(inline=[float(v) for v in values])
        if "blob" in obj and "key" in obj:
            return cls(blob=str(obj["blob"]), key=str(obj["key"]))
        raise DataError(f"{where}: embedding ref needs inline or blob+key")


@dataclass
class MemeRecord:
    """One data point: overlaid text, teacher caption, label, and the
    four embedding references (image, text, caption, context)."""

    id: str
    text: str
    caption: str
    label: int
    split: str
    refs: dict[str, EmbeddingRef | None]
    _loader: "ManifestLoader"

    def embedding(self, field: str) -> np.ndarray:
        ref = self.refs.get(field)
        if ref is None:
            raise LookupMissingError(f"record {self.id!r}: no {field} embedding")
        return self._loader.resolve(ref, f"record {self.id!r}/{field}")

    @property
    def e_img(self) -> np.ndarray:
        return self.embedding("e_img")

    @property
    def e_txt(self) -> np.ndarray:
        return self.embedding("e_txt")

    @property
    def w_caption(self) -> np.ndarray:
        return self.embedding("w_caption")

    @property
    def context_vec(self) -> np.ndarray:
        return self.embedding("context_vec")

    @property
    def has_caption_embedding(self) -> bool:
        return self.refs.get("w_caption") is not None


class ManifestLoader:
    """Opens referenced blobs lazily and caches their indices."""

    def __init__(self, root: Path):
        self.root = root
        self._blobs: dict[str, BlobReader] = {}

    def blob(self, rel_path: str) -> BlobReader:
        reader = self._blobs.get(rel_path)
        if reader is None:
            full = self.root / rel_path
            if not full.exists():
                raise DataError(f"referenced blob {rel_path!r} not found under {self.root}")
            reader = BlobReader(full)
            self._blobs[rel_path] = reader
        return reader

    def check(self, ref: EmbeddingRef, where: str) -> int:
        """Validate a ref without reading the payload; returns its dim."""
        if ref.inline is not None:
            return len(ref.inline)
        reader = self.blob(ref.blob)
        try:
            return reader.dim(ref.key)
        except LookupMissingError as exc:
            raise DataError(f"{where}: dangling embedding ref: {exc}") from exc

    def resolve(self, ref: EmbeddingRef, where: str) -> np.ndarray:
        if ref.inline is not None:
            arr = np.asarray(ref.inline, dtype=np.float64)
        else:
            arr = self.blob(ref.blob).read(ref.key)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{where}: non-finite embedding values")
        return arr


def load_manifest(
    path: str | Path,
    require_captions: bool = False,
    num_classes: int = 2,
) -> list[MemeRecord]:
    """Parse and validate a JSON-lines manifest.

    The first line is a schema header; every following line is one
    record. ``require_captions`` enforces a caption embedding on every
    record (needed whenever the distillation weight is positive).
    """
    path = Path(path)
    loader = ManifestLoader(path.parent)
    records: list[MemeRecord] = []
    seen_ids: set[str] = set()
    header_dims: dict[str, int] | None = None

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if lineno == 1:
                if row.get("schema_version") != MANIFEST_SCHEMA_VERSION or row.get("kind") != "manifest":
                    raise DataError(
                        f"{path}:1: expected manifest header with schema_version "
                        f"{MANIFEST_SCHEMA_VERSION}"
                    )
                dims = row.get("dims")
                if dims is not None:
                    header_dims = {str(k): int(v) for k, v in dims.items()}
                continue
            where = f"{path}:{lineno}"
            for field in ("id", "text", "caption", "label", "split", "embeddings"):
                if field not in row:
                    raise DataError(f"{where}: missing field {field!r}")
            record_id = str(row["id"])
            if record_id in seen_ids:
                raise DataError(f"{where}: duplicate record id {record_id!r}")
            seen_ids.add(record_id)
            label = row["label"]
            if not isinstance(label, int) or not 0 <= label < num_classes:
                raise DataError(
                    f"{where}: label {label!r} outside configured {num_classes} classes"
                )
            embs = row["embeddings"]
            refs: dict[str, EmbeddingRef | None] = {}
            for field in EMBEDDING_FIELDS:
                obj = embs.get(field)
                if obj is None:
                    if field in REQUIRED_EMBEDDING_FIELDS:
                        raise DataError(f"{where}: record {record_id!r} missing {field}")
                    refs[field] = None
                    continue
                ref = EmbeddingRef.parse(obj, where)
                dim = loader.check(ref, f"{where}: {field}")
                if header_dims is not None and field in header_dims and dim != header_dims[field]:
                    warnings.warn(
                        f"{where}: {field} dim {dim} != manifest header dim {header_dims[field]}",
                        stacklevel=2,
                    )
                refs[field] = ref
            if require_captions and refs.get("w_caption") is None:
                raise DataError(
                    f"{where}: record {record_id!r} has no caption embedding but "
                    "distillation is enabled"
                )
            records.append(
                MemeRecord(
                    id=record_id,
                    text=str(row["text"]),
                    caption=str(row["caption"]),
                    label=int(label),
                    split=str(row["split"]),
                    refs=refs,
                    _loader=loader,
                )
            )
    if not records:
        raise DataError(f"{path}: manifest contains no records")
    return records


def write_manifest(
    path: str | Path,
    rows: list[dict],
    dims: dict[str, int] | None = None,
) -> None:
    """Write a manifest from already-shaped record dicts."""
    header: dict = {"schema_version": MANIFEST_SCHEMA_VERSION, "kind": "manifest"}
    if dims:
        header["dims"] = {k: int(v) for k, v in sorted(dims.items())}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def load_node_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Text table: ``count dim`` header, then ``label v1 ... vdim`` lines."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected 'count dim' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise DataError(f"{path}:1: bad header: {exc}") from exc
        if count < 0 or dim <= 0:
            raise DataError(f"{path}:1: invalid count/dim {count}/{dim}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected label + {dim} values, got {len(parts) - 1}"
                )
            label = parts[0]
            if label in table:
                raise DataError(f"{path}:{lineno}: duplicate label {label!r}")
            try:
                values = np.array([np.float32(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad vector: {exc}") from exc
            table[label] = values
    if len(table) != count:
        raise DataError(f"{path}: header claims {count} entries, found {len(table)}")
    return table


def write_node_embeddings(table: dict[str, np.ndarray], path: str | Path) -> None:
    """Inverse of ``load_node_embeddings``; values round to 32-bit."""
    if not table:
        raise DataError("node-embedding table is empty")
    dims = {len(np.atleast_1d(v)) for v in table.values()}
    if len(dims) != 1:
        raise DataError(f"inconsistent embedding dims: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {dim}\n")
        for label, vector in table.items():
            rendered = " ".join(repr(float(np.float32(v))) for v in np.atleast_1d(vector))
            fh.write(f"{label} {rendered}\n")
