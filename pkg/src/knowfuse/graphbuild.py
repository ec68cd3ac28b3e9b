"""Working-graph assembly: pruned sub-KG + context node + features.

The context node sits at index 0 and represents the whole record
(text plus teacher caption); its feature row is the record's context
embedding. It links to every surviving grounded seed with a dedicated
edge type in both directions, and every node carries an explicit
self-loop so message passing retains node identity without changing
the relation-sum form of the propagation rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, LookupMissingError
from .kgstore import CONTEXT_RELATION, SELF_RELATION, KnowledgeStore, SubGraph

CONTEXT_REV_RELATION = "context_link_rev"
CONTEXT_NODE_LABEL = "<context>"
SCHEMA_VERSION = 1


def relation_table(store: KnowledgeStore) -> list[str]:
    """Working-graph relation vocabulary: store relations plus the
    reverse context link appended at the end."""
    return list(store.relation_name) + [CONTEXT_REV_RELATION]


@dataclass(frozen=True)
class WorkingGraph:
    record_id: str
    concepts: tuple[int, ...]  # per node; -1 marks the context node
    labels: tuple[str, ...]
    hops: tuple[int, ...]  # -1 for the context node
    edges: tuple[tuple[int, int, int], ...]  # (src_index, relation_id, dst_index)
    relations: tuple[str, ...]  # id -> name for every relation id in scope
    features: np.ndarray  # |V| x d, float64, row 0 = context embedding

    @property
    def num_nodes(self) -> int:
        return len(self.concepts)

    def edges_of_node(self, index: int) -> list[tuple[int, int, int]]:
        return [e for e in self.edges if e[0] == index or e[2] == index]

    def to_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "record_id": self.record_id,
            "nodes": [
                {"concept": c, "label": l, "hop": h}
                for c, l, h in zip(self.concepts, self.labels, self.hops)
            ],
            "edges": [list(e) for e in self.edges],
            "relations": list(self.relations),
            "features": [[float(x) for x in row] for row in self.features],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, raw: str) -> "WorkingGraph":
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"bad working-graph JSON: {exc}") from exc
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported working-graph schema {payload.get('schema_version')!r}"
            )
        nodes = payload["nodes"]
        return cls(
            record_id=payload["record_id"],
            concepts=tuple(n["concept"] for n in nodes),
            labels=tuple(n["label"] for n in nodes),
            hops=tuple(n["hop"] for n in nodes),
            edges=tuple((e[0], e[1], e[2]) for e in payload["edges"]),
            relations=tuple(payload["relations"]),
            features=np.asarray(payload["features"], dtype=np.float64),
        )


def build(
    record_id: str,
    context_vec: np.ndarray,
    subgraph: SubGraph,
    store: KnowledgeStore,
    embeddings: dict[str, np.ndarray],
    allow_empty: bool = True,
) -> WorkingGraph:
    """Assemble the working graph for one record from a pruned subgraph.

    Node order is the context node followed by concepts in ascending
    entity id, which makes the construction deterministic and the
    serialized form reproducible byte for byte.
    """
    context = np.asarray(context_vec, dtype=np.float64)
    if context.ndim != 1:
        raise DimensionError(f"context embedding must be 1-D, got {context.shape}")
    concept_ids = sorted(subgraph.hops)
    if not concept_ids and not allow_empty:
        raise DataError(f"record {record_id!r}: empty subgraph and fallback disabled")

    relations = relation_table(store)
    rel_self = store.relation_id[SELF_RELATION]
    rel_ctx = store.relation_id[CONTEXT_RELATION]
    rel_ctx_rev = len(relations) - 1

    concepts = [-1] + concept_ids
    labels = [CONTEXT_NODE_LABEL] + [store.label_of(c) for c in concept_ids]
    hops = [-1] + [subgraph.hops[c] for c in concept_ids]
    index_of = {c: i + 1 for i, c in enumerate(concept_ids)}

    rows = [context]
    for label in labels[1:]:
        vec = embeddings.get(label)
        if vec is None:
            raise LookupMissingError(f"record {record_id!r}: no embedding for node {label!r}")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != context.shape:
            raise DimensionError(
                f"record {record_id!r}: node {label!r} dim {vec.shape} != context {context.shape}"
            )
        rows.append(vec)
    features = np.stack(rows, axis=0)
    if not np.all(np.isfinite(features)):
        raise DataError(f"record {record_id!r}: non-finite feature rows")

    edges = [(i, rel_self, i) for i in range(len(concepts))]
    for c in concept_ids:
        if subgraph.hops[c] == 0:
            edges.append((0, rel_ctx, index_of[c]))
            edges.append((index_of[c], rel_ctx_rev, 0))
    for head, rel, tail in subgraph.edges:
        edges.append((index_of[head], rel, index_of[tail]))
    edges.sort(key=lambda e: (e[1], e[0], e[2]))

    return WorkingGraph(
        record_id=record_id,
        concepts=tuple(concepts),
        labels=tuple(labels),
        hops=tuple(hops),
        edges=tuple(edges),
        relations=tuple(relations),
        features=features,
    )
