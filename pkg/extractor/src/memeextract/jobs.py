"""Extraction jobs: turn a raw meme dataset into the classifier's
manifest/blob inputs, and score working-graph concepts for relevance.

A dataset directory holds image files plus ``data.jsonl`` with one
record per line: ``{"id", "img", "text", "label", "split"?}``. Records
whose image cannot be read are logged and skipped; the job continues.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .captioner import PROMPT_TEMPLATES, TemplateCaptioner
from .embedders import HashingTextEmbedder, ImageStatEmbedder
from .formats import BlobWriter, write_manifest, write_node_embeddings, write_scores
from .perplexity import CachePerplexityScorer

BLOB_NAME = "embeddings.bin"
JOB_METADATA_NAME = "job.json"


@dataclass
class ExtractJob:
    dataset_root: str | Path
    out_manifest: str | Path
    prompt_template: str = "meme-context"
    backend: str = "offline"
    embedding_dim: int = 384
    model_ids: dict = field(default_factory=dict)  # hf backend checkpoint paths

    def validate(self) -> None:
        if self.prompt_template not in PROMPT_TEMPLATES:
            raise ValueError(
                f"prompt template {self.prompt_template!r} not in {sorted(PROMPT_TEMPLATES)}"
            )
        if self.backend not in ("offline", "hf"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.embedding_dim < 8:
            raise ValueError("embedding_dim must be >= 8")


def load_dataset(root: str | Path) -> list[dict]:
    root = Path(root)
    data_path = root / "data.jsonl"
    if not data_path.exists():
        raise FileNotFoundError(f"{data_path} not found")
    rows = []
    with open(data_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{data_path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "img", "text", "label"):
                if key not in row:
                    raise ValueError(f"{data_path}:{lineno}: missing field {key!r}")
            row.setdefault("split", "train")
            row["img"] = str(root / row["img"])
            rows.append(row)
    if not rows:
        raise ValueError(f"{data_path}: dataset is empty")
    return rows


def _build_backend(job: ExtractJob):
    if job.backend == "hf":  # pragma: no cover - needs local model weights
        from .captioner import HfCaptioner
        from .embedders import HfClipEmbedder, HfSentenceEmbedder

        clip = HfClipEmbedder(job.model_ids["clip"])
        sentence = HfSentenceEmbedder(job.model_ids["sentence"])
        captioner = HfCaptioner(job.model_ids["captioner"], job.prompt_template)
        return {
            "image": clip.embed_image,
            "text": clip.embed_text,
            "sentence": sentence.embed,
            "caption": captioner.caption,
            "names": {
                "image": clip.name,
                "text": clip.name,
                "sentence": sentence.name,
                "caption": captioner.name,
            },
        }
    text_embedder = HashingTextEmbedder(job.embedding_dim)
    image_embedder = ImageStatEmbedder(job.embedding_dim)
    captioner = TemplateCaptioner(job.prompt_template)
    return {
        "image": image_embedder.embed,
        "text": text_embedder.embed,
        "sentence": text_embedder.embed,
        "caption": captioner.caption,
        "names": {
            "image": image_embedder.name,
            "text": text_embedder.name,
            "sentence": text_embedder.name,
            "caption": captioner.name,
        },
    }


def run_extract(job: ExtractJob) -> dict:
    """Produce manifest + blob; returns paths and per-record errors."""
    job.validate()
    dataset = load_dataset(job.dataset_root)
    backend = _build_backend(job)
    out_manifest = Path(job.out_manifest)
    out_manifest.parent.mkdir(parents=True, exist_ok=True)

    writer = BlobWriter()
    rows = []
    errors = []
    dims: dict[str, int] = {}
    for record in dataset:
        record_id = str(record["id"])
        try:
            caption = backend["caption"](record["img"], record["text"])
            vectors = {
                "e_img": backend["image"](record["img"]),
                "e_txt": backend["text"](record["text"]),
                "w_caption": backend["sentence"](caption),
                "context_vec": backend["sentence"](f"{record['text']} {caption}"),
            }
        except (OSError, ValueError) as exc:
            errors.append({"record_id": record_id, "error": str(exc)})
            continue
        for name, vec in vectors.items():
            writer.add(f"{record_id}/{name}", vec)
            dims[name] = int(np.asarray(vec).shape[0])
        rows.append(
            {
                "id": record_id,
                "text": record["text"],
                "caption": caption,
                "label": int(record["label"]),
                "split": record["split"],
                "embeddings": {
                    name: {"blob": BLOB_NAME, "key": f"{record_id}/{name}"}
                    for name in ("e_img", "e_txt", "w_caption", "context_vec")
                },
            }
        )
    if not rows:
        raise ValueError("no records could be extracted")
    blob_path = out_manifest.parent / BLOB_NAME
    writer.save(blob_path)
    write_manifest(out_manifest, rows, dims=dims)

    metadata = {
        "backend": job.backend,
        "encoders": backend["names"],
        "prompt_template": job.prompt_template,
        "prompt_text": PROMPT_TEMPLATES[job.prompt_template],
        "embedding_dims": dims,
        "records": len(rows),
        "skipped": errors,
        "decoding": {"do_sample": False} if job.backend == "hf" else None,
    }
    metadata_path = out_manifest.parent / JOB_METADATA_NAME
    metadata_path.write_text(
        json.dumps(metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {
        "manifest_path": out_manifest,
        "blob_path": blob_path,
        "metadata_path": metadata_path,
        "errors": errors,
    }


def embed_labels(labels_path: str | Path, out_path: str | Path, dim: int = 384) -> int:
    """Node-label embedding table from a label list (one per line)."""
    embedder = HashingTextEmbedder(dim)
    table = {}
    with open(labels_path, encoding="utf-8") as fh:
        for line in fh:
            label = line.strip()
            if not label or label.startswith("#"):
                continue
            table[label] = embedder.embed(label.replace("_", " "))
    if not table:
        raise ValueError(f"{labels_path}: no labels found")
    write_node_embeddings(table, out_path)
    return len(table)


def _manifest_contexts(manifest_path: str | Path) -> dict[str, str]:
    """record_id -> "text caption" drawn from an emitted manifest."""
    contexts = {}
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 or not line.strip():
                continue
            row = json.loads(line)
            contexts[str(row["id"])] = f"{row['text']} {row['caption']}"
    if not contexts:
        raise ValueError(f"{manifest_path}: no records")
    return contexts


def _graph_node_labels(graphs_path: str | Path) -> dict[str, list[str]]:
    """record_id -> concept labels from a candidates or graphs artifact."""
    per_record: dict[str, list[str]] = {}
    with open(graphs_path, encoding="utf-8") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if lineno == 1:
                header = row.get("kind")
                if header not in ("subgraph_candidates", "working_graphs"):
                    raise ValueError(
                        f"{graphs_path}: expected a candidates or working-graphs artifact"
                    )
                continue
            if header == "subgraph_candidates":
                labels = [str(node[1]) for node in row["nodes"]]
            else:
                labels = [
                    str(node["label"]) for node in row["nodes"] if node.get("concept", -1) >= 0
                ]
            per_record[str(row["record_id"])] = labels
    return per_record


def run_score(
    manifest_path: str | Path,
    graphs_path: str | Path,
    out_path: str | Path,
    backend: str = "offline",
    model_id: str | None = None,
) -> dict:
    """Score each record's candidate concepts; lower is more relevant."""
    contexts = _manifest_contexts(manifest_path)
    node_labels = _graph_node_labels(graphs_path)
    if backend == "hf":  # pragma: no cover - needs local model weights
        from .perplexity import HfMaskedLMScorer

        scorer = HfMaskedLMScorer(model_id)
    else:
        scorer = CachePerplexityScorer(sorted(contexts.values()))

    rows = []
    skipped = 0
    for record_id in contexts:
        for label in node_labels.get(record_id, []):
            try:
                score = scorer.score(contexts[record_id], label)
            except ValueError as exc:
                warnings.warn(f"record {record_id!r}: skipping concept: {exc}", stacklevel=2)
                skipped += 1
                continue
            rows.append({"record_id": record_id, "concept": label, "score": score})
    write_scores(rows, out_path)
    return {"scores_path": Path(out_path), "rows": len(rows), "skipped": skipped,
            "scorer": scorer.name}
