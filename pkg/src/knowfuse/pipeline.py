"""Pipeline stages behind the CLI subcommands.

Every stage reads versioned artifacts from the run workdir, writes its
own, and is independently re-runnable: identical inputs and seed give
byte-identical outputs. Per-record stages (grounding, relevance
scoring, graph building) map a pure function over records, optionally
across a process pool, with results written in input order.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import graphbuild, kgstore, relevance
from .config import RunConfig
from .dataio import MemeRecord, load_manifest, load_node_embeddings
from .errors import ConfigError, DataError
from .graphbuild import WorkingGraph
from .kgstore import KnowledgeStore, SubGraph
from .metrics import auc, classification_metrics, multiclass_metrics
from .model import DataDims, Example, Model
from .trainer import Checkpoint, fit, model_from_checkpoint
from .report import (
    plot_roc,
    plot_score_histogram,
    plot_training_curves,
    write_metrics_files,
)

MENTIONS_FILE = "mentions.jsonl"
CANDIDATES_FILE = "candidates.jsonl"
SCORES_FILE = "scores.jsonl"
GRAPHS_FILE = "graphs.jsonl"
CHECKPOINT_FILE = "checkpoint.ckpt"
TRAIN_LOG_FILE = "train_log.jsonl"
PREDICTIONS_FILE = "predictions.csv"
KG_LABELS_FILE = "kg_labels.txt"


def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _read_jsonl(path: Path, expected_kind: str) -> tuple[dict, list[dict]]:
    if not path.exists():
        raise DataError(f"missing stage artifact {path}; run the producing stage first")
    rows = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if lineno == 1:
                header = obj
                if header.get("kind") != expected_kind:
                    raise DataError(f"{path}: expected kind {expected_kind!r}")
                continue
            rows.append(obj)
    if header is None:
        raise DataError(f"{path}: empty artifact")
    return header, rows


def _parallel_map(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def _store_path(config: RunConfig) -> Path:
    if config.paths.kg_store:
        return Path(config.paths.kg_store)
    return config.workdir() / "kg_store.bin"


def _load_store(config: RunConfig) -> KnowledgeStore:
    path = _store_path(config)
    if not path.exists():
        raise DataError(f"knowledge store {path} not found; run kg-ingest first")
    return KnowledgeStore.load(path)


def _manifest_records(config: RunConfig, require_captions: bool) -> list[MemeRecord]:
    if not config.paths.manifest:
        raise ConfigError("paths.manifest is not set")
    return load_manifest(
        config.paths.manifest,
        require_captions=require_captions,
        num_classes=config.loss.num_classes,
    )


# ---------------------------------------------------------------------------
# kg-ingest


def run_kg_ingest(config: RunConfig, raw_conceptnet: bool = False) -> dict:
    if not config.paths.kg_edges:
        raise ConfigError("paths.kg_edges is not set")
    store, report = kgstore.ingest(config.paths.kg_edges, raw_conceptnet=raw_conceptnet)
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    store_path = _store_path(config)
    store_path.parent.mkdir(parents=True, exist_ok=True)
    store.save(store_path)
    (workdir / "ingest_report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    labels_path = workdir / KG_LABELS_FILE
    labels_path.write_text("".join(l + "\n" for l in store.entity_label), encoding="utf-8")
    return {"report": report, "store_path": store_path, "labels_path": labels_path}


# ---------------------------------------------------------------------------
# ground


def _ground_one(store: KnowledgeStore, hops: int, cap: int, payload: tuple) -> tuple[dict, dict]:
    record_id, text, caption = payload
    mentions = kgstore.ground(text, store, source="meme_text") + kgstore.ground(
        caption, store, source="caption"
    )
    seeds = sorted({m.concept for m in mentions})
    mention_row = {
        "record_id": record_id,
        "seeds": seeds,
        "mentions": [
            {
                "source": m.source,
                "start": m.start,
                "end": m.end,
                "concept": m.concept,
                "label": m.label,
            }
            for m in mentions
        ],
    }
    if seeds:
        sub = kgstore.expand(seeds, hops, store, max_nodes_per_hop=cap)
        nodes = [[c, store.label_of(c), h] for c, h in sorted(sub.hops.items())]
        edges = [list(e) for e in sub.edges]
    else:
        nodes, edges = [], []
    candidate_row = {"record_id": record_id, "nodes": nodes, "edges": edges}
    return mention_row, candidate_row


def run_ground(config: RunConfig, workers: int = 1) -> dict:
    store = _load_store(config)
    records = _manifest_records(config, require_captions=False)
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    payloads = [(r.id, r.text, r.caption) for r in records]
    fn = partial(_ground_one, store, config.knowledge.hops, config.knowledge.max_nodes_per_hop)
    results = _parallel_map(fn, payloads, workers)

    mentions_path = workdir / MENTIONS_FILE
    candidates_path = workdir / CANDIDATES_FILE
    with open(mentions_path, "w", encoding="utf-8") as m_fh, open(
        candidates_path, "w", encoding="utf-8"
    ) as c_fh:
        m_fh.write(_dump_line({"kind": "grounded_mentions", "schema_version": 1}))
        c_fh.write(
            _dump_line(
                {
                    "kind": "subgraph_candidates",
                    "schema_version": 1,
                    "hops": config.knowledge.hops,
                }
            )
        )
        for mention_row, candidate_row in results:
            m_fh.write(_dump_line(mention_row))
            c_fh.write(_dump_line(candidate_row))
    return {"mentions_path": mentions_path, "candidates_path": candidates_path}


# ---------------------------------------------------------------------------
# score-relevance


def _score_one(
    store: KnowledgeStore,
    embeddings: dict[str, np.ndarray] | None,
    external: dict[str, dict[str, float]] | None,
    payload: tuple,
) -> dict:
    record_id, node_ids, context_vec = payload
    if not node_ids:
        return {"record_id": record_id, "scores": []}
    if external is not None:
        scored = relevance.load_external_scores(external, record_id, node_ids, store)
    else:
        scored = relevance.score_cosine(context_vec, node_ids, store, embeddings)
    ordered = sorted(scored, key=lambda s: s.concept)
    return {"record_id": record_id, "scores": [[s.concept, s.score] for s in ordered]}


def run_score_relevance(config: RunConfig, workers: int = 1) -> dict:
    store = _load_store(config)
    workdir = config.workdir()
    _header, candidate_rows = _read_jsonl(workdir / CANDIDATES_FILE, "subgraph_candidates")
    records = {r.id: r for r in _manifest_records(config, require_captions=False)}

    external = None
    embeddings = None
    if config.knowledge.scorer == "external":
        if not config.paths.external_scores:
            raise ConfigError("scorer is 'external' but paths.external_scores is not set")
        external = relevance.read_external_scores(config.paths.external_scores)
        direction = "lower"
    else:
        if not config.paths.node_embeddings:
            raise ConfigError("scorer is 'cosine' but paths.node_embeddings is not set")
        embeddings = load_node_embeddings(config.paths.node_embeddings)
        direction = "higher"

    payloads = []
    for row in candidate_rows:
        record = records.get(row["record_id"])
        if record is None:
            raise DataError(f"candidates mention unknown record {row['record_id']!r}")
        node_ids = [n[0] for n in row["nodes"]]
        context = record.context_vec if config.knowledge.scorer == "cosine" else None
        payloads.append((row["record_id"], node_ids, context))

    fn = partial(_score_one, store, embeddings, external)
    results = _parallel_map(fn, payloads, workers)

    scores_path = workdir / SCORES_FILE
    with open(scores_path, "w", encoding="utf-8") as fh:
        fh.write(
            _dump_line(
                {
                    "kind": "relevance_scores",
                    "schema_version": 1,
                    "direction": direction,
                    "scorer": config.knowledge.scorer,
                }
            )
        )
        for row in results:
            fh.write(_dump_line(row))
    return {"scores_path": scores_path}


# ---------------------------------------------------------------------------
# build-graphs


def _build_one(
    store: KnowledgeStore,
    embeddings: dict[str, np.ndarray],
    top_k: int,
    higher_is_better: bool,
    allow_empty: bool,
    payload: tuple,
) -> str:
    record_id, nodes, edges, score_pairs, context_vec = payload
    hops = {int(c): int(h) for c, _label, h in nodes}
    sub = SubGraph(hops=hops, edges=[tuple(e) for e in edges])
    seeds = {c for c, h in hops.items() if h == 0}
    if hops:
        scored = relevance._rank(
            [(int(c), float(s)) for c, s in score_pairs], higher_is_better=higher_is_better
        )
        keep = relevance.top_k(scored, top_k, seeds=seeds)
        sub = relevance.prune_subgraph(sub, keep)
    graph = graphbuild.build(
        record_id, context_vec, sub, store, embeddings, allow_empty=allow_empty
    )
    return graph.to_json()


def run_build_graphs(config: RunConfig, workers: int = 1) -> dict:
    store = _load_store(config)
    workdir = config.workdir()
    _c_header, candidate_rows = _read_jsonl(workdir / CANDIDATES_FILE, "subgraph_candidates")
    s_header, score_rows = _read_jsonl(workdir / SCORES_FILE, "relevance_scores")
    higher = s_header.get("direction", "higher") == "higher"
    scores_by_record = {row["record_id"]: row["scores"] for row in score_rows}
    records = {r.id: r for r in _manifest_records(config, require_captions=False)}
    if not config.paths.node_embeddings:
        raise ConfigError("paths.node_embeddings is not set")
    embeddings = load_node_embeddings(config.paths.node_embeddings)

    payloads = []
    for row in candidate_rows:
        record = records.get(row["record_id"])
        if record is None:
            raise DataError(f"candidates mention unknown record {row['record_id']!r}")
        payloads.append(
            (
                row["record_id"],
                row["nodes"],
                row["edges"],
                scores_by_record.get(row["record_id"], []),
                record.context_vec,
            )
        )

    fn = partial(
        _build_one,
        store,
        embeddings,
        config.knowledge.top_k,
        higher,
        config.knowledge.allow_empty_graphs,
    )
    results = _parallel_map(fn, payloads, workers)

    graphs_path = workdir / GRAPHS_FILE
    with open(graphs_path, "w", encoding="utf-8") as fh:
        fh.write(
            _dump_line(
                {
                    "kind": "working_graphs",
                    "schema_version": 1,
                    "relations": graphbuild.relation_table(store),
                }
            )
        )
        for line in results:
            fh.write(line + "\n")
    return {"graphs_path": graphs_path}


def load_working_graphs(path: str | Path) -> tuple[list[str], dict[str, WorkingGraph]]:
    header, rows = _read_jsonl(Path(path), "working_graphs")
    graphs = {}
    for row in rows:
        graph = WorkingGraph.from_json(json.dumps(row))
        graphs[graph.record_id] = graph
    return list(header["relations"]), graphs


# ---------------------------------------------------------------------------
# examples and dims


def build_examples(
    records: list[MemeRecord],
    graphs: dict[str, WorkingGraph] | None,
    need_captions: bool,
) -> list[Example]:
    examples = []
    for record in records:
        graph = None
        if graphs is not None:
            graph = graphs.get(record.id)
            if graph is None:
                raise DataError(f"no working graph for record {record.id!r}; run build-graphs")
        examples.append(
            Example(
                record_id=record.id,
                label=record.label,
                e_img=record.e_img,
                e_txt=record.e_txt,
                w_caption=record.w_caption if need_captions and record.has_caption_embedding else None,
                graph=graph,
            )
        )
    return examples


def _dims_from(examples: list[Example], relations: list[str] | None, kd: bool) -> DataDims:
    first = examples[0]
    return DataDims(
        img=int(first.e_img.shape[0]),
        txt=int(first.e_txt.shape[0]),
        caption=int(first.w_caption.shape[0]) if kd and first.w_caption is not None else None,
        node_feature=int(first.graph.features.shape[1]) if first.graph is not None else None,
        num_relations=len(relations) if relations is not None else None,
    )


def _split(examples: list[Example], records: list[MemeRecord], tag: str) -> list[Example]:
    by_id = {r.id: r.split for r in records}
    return [ex for ex in examples if by_id[ex.record_id] == tag]


# ---------------------------------------------------------------------------
# train / eval / predict


def run_train(config: RunConfig) -> dict:
    config.require_seed()
    kd = config.loss.kd_enabled
    records = _manifest_records(config, require_captions=kd)
    graphs = None
    relations = None
    if config.knowledge.enabled:
        relations, graphs = load_working_graphs(config.workdir() / GRAPHS_FILE)
    examples = build_examples(records, graphs, need_captions=kd)
    train_examples = _split(examples, records, "train")
    val_examples = _split(examples, records, "val")
    dims = _dims_from(examples, relations, kd)

    result = fit(
        train_examples,
        val_examples,
        config.model_config(),
        config.loss,
        config.train_config(),
        dims,
    )
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = workdir / CHECKPOINT_FILE
    result.checkpoint.save(checkpoint_path)
    log_path = workdir / TRAIN_LOG_FILE
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in result.log:
            fh.write(_dump_line(row))
    figures_dir = workdir / "figures"
    figures_dir.mkdir(exist_ok=True)
    curves_path = plot_training_curves(result.log, figures_dir / "training_curves.png")
    return {
        "checkpoint_path": checkpoint_path,
        "log_path": log_path,
        "curves_path": curves_path,
        "result": result,
    }


def _load_model_for_inference(config: RunConfig) -> tuple[Model, Checkpoint]:
    checkpoint_path = config.workdir() / CHECKPOINT_FILE
    if not checkpoint_path.exists():
        raise DataError(f"checkpoint {checkpoint_path} not found; run train first")
    checkpoint = Checkpoint.load(checkpoint_path)
    model = Model(
        config.model_config(),
        config.loss,
        DataDims.from_dict(checkpoint.dims),
        np.random.default_rng(0),
    )
    model.load_param_arrays(checkpoint.params)
    return model, checkpoint


def _scored_split(config: RunConfig, model: Model, split: str):
    records = _manifest_records(config, require_captions=False)
    graphs = None
    if config.knowledge.enabled:
        _relations, graphs = load_working_graphs(config.workdir() / GRAPHS_FILE)
    examples = build_examples(records, graphs, need_captions=False)
    chosen = _split(examples, records, split)
    if not chosen:
        raise DataError(f"no records in split {split!r}")
    scores = np.array([model.predict_score(ex) for ex in chosen])
    labels = np.array([ex.label for ex in chosen])
    ids = [ex.record_id for ex in chosen]
    return ids, scores, labels


def run_eval(config: RunConfig) -> dict:
    model, _checkpoint = _load_model_for_inference(config)
    ids, scores, labels = _scored_split(config, model, config.eval.split)
    workdir = config.workdir()
    figures_dir = workdir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    if config.loss.num_classes == 2:
        report = classification_metrics(scores, labels, threshold=config.eval.threshold)
        plot_roc(scores, labels, figures_dir / "roc.png", auc_value=report.auc)
        plot_score_histogram(scores, labels, figures_dir / "score_hist.png")
    else:
        report = multiclass_metrics(scores, labels)
    paths = write_metrics_files(report, workdir)
    del ids
    return {"report": report, **paths}


def run_predict(config: RunConfig) -> dict:
    model, _checkpoint = _load_model_for_inference(config)
    ids, scores, labels = _scored_split(config, model, config.eval.split)
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    predictions_path = workdir / PREDICTIONS_FILE
    with open(predictions_path, "w", encoding="utf-8") as fh:
        if config.loss.num_classes == 2:
            fh.write("record_id,label,score,prediction\n")
            for rid, score, label in zip(ids, scores, labels):
                pred = int(score >= config.eval.threshold)
                fh.write(f"{rid},{label},{float(score)!r},{pred}\n")
        else:
            fh.write("record_id,label,probs,prediction\n")
            for rid, row, label in zip(ids, scores, labels):
                probs = ";".join(repr(float(p)) for p in row)
                fh.write(f"{rid},{label},{probs},{int(np.argmax(row))}\n")
    return {"predictions_path": predictions_path}


def run_gradcheck(instances: int = 20) -> tuple[list[str], bool]:
    from .gradcheck import run_suite

    suite = run_suite(instances=instances)
    return suite.lines(), suite.passed


def eval_auc_on_split(config: RunConfig, model: Model, split: str) -> float:
    """Convenience used by experiments: AUC of a trained model on a split."""
    _ids, scores, labels = _scored_split(config, model, split)
    return auc(scores, labels)
