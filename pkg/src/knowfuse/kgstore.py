"""Commonsense knowledge store: ingestion, grounding, and expansion.

Entities and relations are interned to dense integer ids. Two relation
names are reserved at ids 0 and 1 for downstream working-graph
assembly: ``self`` (identity loops) and ``context_link`` (the edge type
that ties the per-record context node to grounded concepts).
"""

from __future__ import annotations

import io
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, LookupMissingError

SELF_RELATION = "self"
CONTEXT_RELATION = "context_link"
RESERVED_RELATIONS = (SELF_RELATION, CONTEXT_RELATION)

# Small fixed list so grounding never fires on bare function words.
STOPWORDS = frozenset(
    """a an and are as at be but by for from has have he her his i if in is it
    its me my no not of on or our she so that the their them they this to was
    we what when which who will with you your""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9']+")
_SNAPSHOT_MAGIC = b"KFKG"
_SNAPSHOT_VERSION = 1


def normalize_label(raw: str) -> str:
    """Lowercase, trim, spaces to underscores."""
    return "_".join(raw.strip().lower().split())


def normalize_conceptnet_uri(uri: str) -> str | None:
    """``/c/en/ice_cream/n`` -> ``ice_cream``; None for non-English."""
    parts = uri.split("/")
    if len(parts) < 4 or parts[1] != "c":
        return None
    if parts[2] != "en":
        return None
    return normalize_label(parts[3])


@dataclass
class IngestReport:
    entities: int
    relations: int
    edges: int
    lines_read: int
    lines_skipped: int
    duplicates_dropped: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class GroundedMention:
    source: str  # "meme_text" | "caption"
    start: int
    end: int
    concept: int
    label: str


@dataclass
class SubGraph:
    """Hop-tagged node set with the edges induced among its members."""

    hops: dict[int, int]  # concept id -> hop distance (0 = grounded seed)
    edges: list[tuple[int, int, int]]  # (head, relation, tail)

    def nodes_at_hop(self, hop: int) -> list[int]:
        return sorted(c for c, h in self.hops.items() if h == hop)

    def node_ids(self) -> list[int]:
        return sorted(self.hops)


class KnowledgeStore:
    """Interned entity/relation tables with adjacency indices.

    Immutable after construction; all lookups are read-only, so a single
    store can back any number of concurrent grounding/expansion calls.
    """

    def __init__(self):
        self.entity_label: list[str] = []
        self.entity_id: dict[str, int] = {}
        self.relation_name: list[str] = []
        self.relation_id: dict[str, int] = {}
        self.edges: list[tuple[int, int, int, float]] = []
        self._out: dict[int, list[int]] = {}
        self._in: dict[int, list[int]] = {}
        self._edge_keys: set[tuple[int, int, int]] = set()
        for name in RESERVED_RELATIONS:
            self._intern_relation(name)

    # -- construction -------------------------------------------------

    def _intern_entity(self, label: str) -> int:
        eid = self.entity_id.get(label)
        if eid is None:
            eid = len(self.entity_label)
            self.entity_id[label] = eid
            self.entity_label.append(label)
        return eid

    def _intern_relation(self, name: str) -> int:
        rid = self.relation_id.get(name)
        if rid is None:
            rid = len(self.relation_name)
            self.relation_id[name] = rid
            self.relation_name.append(name)
        return rid

    def _add_edge(self, head: int, rel: int, tail: int, weight: float) -> bool:
        key = (head, rel, tail)
        if key in self._edge_keys:
            return False
        self._edge_keys.add(key)
        idx = len(self.edges)
        self.edges.append((head, rel, tail, weight))
        self._out.setdefault(head, []).append(idx)
        self._in.setdefault(tail, []).append(idx)
        return True

    # -- queries ------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self.entity_label)

    @property
    def num_relations(self) -> int:
        return len(self.relation_name)

    def label_of(self, concept: int) -> str:
        try:
            return self.entity_label[concept]
        except IndexError:
            raise LookupMissingError(f"unknown concept id {concept}") from None

    def neighbors(self, concept: int) -> list[int]:
        """Undirected neighborhood: heads of in-edges and tails of out-edges."""
        seen = set()
        for idx in self._out.get(concept, ()):
            seen.add(self.edges[idx][2])
        for idx in self._in.get(concept, ()):
            seen.add(self.edges[idx][0])
        seen.discard(concept)
        return sorted(seen)

    def edges_among(self, members: set[int]) -> list[tuple[int, int, int]]:
        out = []
        for head, rel, tail, _w in self.edges:
            if head in members and tail in members:
                out.append((head, rel, tail))
        return out

    # -- snapshot -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        buf.write(_SNAPSHOT_MAGIC)
        buf.write(struct.pack("<III", _SNAPSHOT_VERSION, self.num_entities, self.num_relations))
        buf.write(struct.pack("<I", len(self.edges)))
        for table in (self.entity_label, self.relation_name):
            for label in table:
                raw = label.encode("utf-8")
                buf.write(struct.pack("<H", len(raw)))
                buf.write(raw)
        for head, rel, tail, weight in self.edges:
            buf.write(struct.pack("<IIIf", head, rel, tail, weight))
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeStore":
        data = Path(path).read_bytes()
        if data[:4] != _SNAPSHOT_MAGIC:
            raise DataError(f"{path}: not a knowledge store snapshot")
        version, n_ent, n_rel, n_edges = struct.unpack_from("<IIII", data, 4)
        if version != _SNAPSHOT_VERSION:
            raise DataError(f"{path}: unsupported snapshot version {version}")
        store = cls.__new__(cls)
        store.entity_label = []
        store.entity_id = {}
        store.relation_name = []
        store.relation_id = {}
        store.edges = []
        store._out = {}
        store._in = {}
        store._edge_keys = set()
        offset = 20
        for table, index, count in (
            (store.entity_label, store.entity_id, n_ent),
            (store.relation_name, store.relation_id, n_rel),
        ):
            for _ in range(count):
                (length,) = struct.unpack_from("<H", data, offset)
                offset += 2
                label = data[offset : offset + length].decode("utf-8")
                offset += length
                index[label] = len(table)
                table.append(label)
        for _ in range(n_edges):
            head, rel, tail, weight = struct.unpack_from("<IIIf", data, offset)
            offset += 16
            store._add_edge(head, rel, tail, float(weight))
        for name in RESERVED_RELATIONS:
            if store.relation_name.count(name) != 1:
                raise DataError(f"{path}: reserved relation {name!r} corrupted")
        return store


def _parse_simple_line(line: str) -> tuple[str, str, str, float]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (3, 4):
        raise ValueError("expected head<TAB>relation<TAB>tail[<TAB>weight]")
    head, rel, tail = (normalize_label(p) for p in parts[:3])
    if not head or not rel or not tail:
        raise ValueError("empty field")
    weight = 1.0
    if len(parts) == 4:
        weight = float(parts[3])
    return head, rel, tail, weight


def _parse_raw_line(line: str) -> tuple[str, str, str, float] | None:
    """One row of the 5-column assertion dump; None for non-English rows."""
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 5:
        raise ValueError("expected 5 tab-separated columns")
    rel_parts = parts[1].split("/")
    if len(rel_parts) < 3 or rel_parts[1] != "r":
        raise ValueError(f"malformed relation uri {parts[1]!r}")
    rel = rel_parts[2]
    head = normalize_conceptnet_uri(parts[2])
    tail = normalize_conceptnet_uri(parts[3])
    if head is None or tail is None:
        return None
    try:
        weight = float(json.loads(parts[4]).get("weight", 1.0))
    except (json.JSONDecodeError, AttributeError) as exc:
        raise ValueError(f"malformed metadata column: {exc}") from exc
    return head, rel, tail, weight


def ingest(
    path: str | Path,
    raw_conceptnet: bool = False,
    language_filter: str = "en",
    min_weight: float = 0.0,
) -> tuple[KnowledgeStore, IngestReport]:
    """Build a store from a TSV edge file.

    The simplified format is ``head<TAB>relation<TAB>tail<TAB>weight``
    with ``#`` comments; ``raw_conceptnet`` switches to the 5-column
    assertion dump and keeps English concepts only.
    """
    del language_filter  # only English supported; raw parser enforces /c/en/
    store = KnowledgeStore()
    lines_read = 0
    skipped = 0
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            lines_read += 1
            if not line.strip() or line.lstrip().startswith("#"):
                skipped += 1
                continue
            try:
                parsed = _parse_raw_line(line) if raw_conceptnet else _parse_simple_line(line)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if parsed is None:
                skipped += 1
                continue
            head, rel, tail, weight = parsed
            if weight < min_weight:
                skipped += 1
                continue
            h = store._intern_entity(head)
            r = store._intern_relation(rel)
            t = store._intern_entity(tail)
            if not store._add_edge(h, r, t, weight):
                duplicates += 1
    if not store.edges:
        raise DataError(f"{path}: no edges ingested")
    report = IngestReport(
        entities=store.num_entities,
        relations=store.num_relations,
        edges=len(store.edges),
        lines_read=lines_read,
        lines_skipped=skipped,
        duplicates_dropped=duplicates,
    )
    return store, report


def ground(text: str, store: KnowledgeStore, source: str = "meme_text") -> list[GroundedMention]:
    """Match n-grams (n <= 3) of the text against entity labels.

    Longest match wins on overlaps; single-token matches never come
    from the stopword list; matching is case-insensitive. Spans index
    into the original string.
    """
    tokens = [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text.lower())]
    mentions: list[GroundedMention] = []
    i = 0
    while i < len(tokens):
        matched = False
        for n in (3, 2, 1):
            if i + n > len(tokens):
                continue
            words = [tokens[j][0] for j in range(i, i + n)]
            if n == 1 and words[0] in STOPWORDS:
                continue
            label = "_".join(words)
            concept = store.entity_id.get(label)
            if concept is not None:
                mentions.append(
                    GroundedMention(
                        source=source,
                        start=tokens[i][1],
                        end=tokens[i + n - 1][2],
                        concept=concept,
                        label=label,
                    )
                )
                i += n
                matched = True
                break
        if not matched:
            i += 1
    return mentions


def expand(
    seeds: list[int],
    hops: int,
    store: KnowledgeStore,
    max_nodes_per_hop: int = 2000,
) -> SubGraph:
    """Breadth-first neighborhood of the seeds with per-hop caps.

    Expansion treats edges as undirected for reachability; the induced
    edge list keeps stored directions. New nodes at each hop are taken
    in ascending entity id for determinism.
    """
    if not seeds:
        raise DataError("expand requires at least one seed concept")
    if hops not in (1, 2):
        raise DataError(f"hops must be 1 or 2, got {hops}")
    for seed in seeds:
        if not 0 <= seed < store.num_entities:
            raise LookupMissingError(f"seed concept id {seed} not in store")

    hops_of = {seed: 0 for seed in sorted(set(seeds))}
    frontier = sorted(hops_of)
    for hop in range(1, hops + 1):
        fresh = sorted(
            {n for node in frontier for n in store.neighbors(node)} - hops_of.keys()
        )
        fresh = fresh[:max_nodes_per_hop]
        for node in fresh:
            hops_of[node] = hop
        frontier = fresh
    members = set(hops_of)
    return SubGraph(hops=hops_of, edges=store.edges_among(members))
