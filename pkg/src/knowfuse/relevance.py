"""Relevance scoring of candidate concepts against the record context.

Two scorer families share one ScoredNode shape: cosine similarity
(computed in-core from a label-embedding table, higher is better) and
externally produced perplexity-style scores (read from file, lower is
better). Pruning keeps grounded seed concepts unconditionally; they
anchor the context node and dropping them would orphan it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CoverageError, DataError, LookupMissingError, NumericError
from .kgstore import KnowledgeStore, SubGraph

COSINE = "cosine"
EXTERNAL = "external"


@dataclass(frozen=True)
class ScoredNode:
    concept: int
    score: float
    rank: int  # 0 = most relevant under the scorer's direction


def _rank(pairs: list[tuple[int, float]], higher_is_better: bool) -> list[ScoredNode]:
    sign = -1.0 if higher_is_better else 1.0
    ordered = sorted(pairs, key=lambda p: (sign * p[1], p[0]))
    return [ScoredNode(concept=c, score=s, rank=i) for i, (c, s) in enumerate(ordered)]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(u, v) / (nu * nv))


def score_cosine(
    context_vec: np.ndarray,
    node_ids: list[int],
    store: KnowledgeStore,
    embeddings: dict[str, np.ndarray],
) -> list[ScoredNode]:
    """Score each node by cosine(context, label embedding); higher is better."""
    context = np.asarray(context_vec, dtype=np.float64)
    pairs = []
    for concept in node_ids:
        label = store.label_of(concept)
        vec = embeddings.get(label)
        if vec is None:
            raise LookupMissingError(f"no embedding for concept {label!r}")
        if vec.shape != context.shape:
            raise DataError(
                f"embedding dim {vec.shape} for {label!r} != context dim {context.shape}"
            )
        pairs.append((concept, cosine(context, vec)))
    return _rank(pairs, higher_is_better=True)


def read_external_scores(path: str | Path) -> dict[str, dict[str, float]]:
    """Parse a JSON-lines score file into {record_id: {concept_label: score}}."""
    table: dict[str, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                record_id = str(row["record_id"])
                concept = str(row["concept"])
                score = float(row["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad score row: {exc}") from exc
            table.setdefault(record_id, {})[concept] = score
    return table


def load_external_scores(
    table: dict[str, dict[str, float]],
    record_id: str,
    node_ids: list[int],
    store: KnowledgeStore,
) -> list[ScoredNode]:
    """Attach externally computed scores (lower is better) to candidates.

    Every (record, node) pair must be covered; missing pairs abort with
    the offending labels listed.
    """
    if not node_ids:
        return []
    per_record = table.get(record_id, {})
    missing = [store.label_of(c) for c in node_ids if store.label_of(c) not in per_record]
    if missing:
        raise CoverageError(
            f"external scores missing for record {record_id!r}: {', '.join(sorted(missing))}"
        )
    pairs = [(c, per_record[store.label_of(c)]) for c in node_ids]
    return _rank(pairs, higher_is_better=False)


def top_k(scored: list[ScoredNode], k: int, seeds: set[int] | None = None) -> set[int]:
    """Keep the k best-ranked concepts; hop-0 seeds are always retained.

    When k does not even cover the seeds, all seeds are still kept (the
    result may then exceed k).
    """
    if k < 1:
        raise ConfigError(f"top_k requires k >= 1, got {k}")
    seeds = seeds or set()
    kept = set(seeds) & {n.concept for n in scored}
    budget = max(k - len(kept), 0)
    for node in sorted(scored, key=lambda n: n.rank):
        if node.concept in kept:
            continue
        if budget == 0:
            break
        kept.add(node.concept)
        budget -= 1
    return kept


def prune_subgraph(sub: SubGraph, keep: set[int]) -> SubGraph:
    """Restrict a subgraph to the retained concepts and their edges."""
    hops = {c: h for c, h in sub.hops.items() if c in keep}
    edges = [(h, r, t) for h, r, t in sub.edges if h in hops and t in hops]
    return SubGraph(hops=hops, edges=edges)
