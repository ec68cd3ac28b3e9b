"""Round-trip acceptance: extractor outputs drive the classifier end to
end purely through its public file formats and CLI."""

import json
import warnings

import pytest
import yaml

from memeextract.cli import main as extract_main

knowfuse_cli = pytest.importorskip("knowfuse.cli")
knowfuse_dataio = pytest.importorskip("knowfuse.dataio")

TOY_KG = """\
pasta\tRelatedTo\tfood\t2.0
pasta\tAtLocation\tkitchen\t1.0
garlic_sauce\tUsedFor\tpasta\t1.0
garlic\tPartOf\tgarlic_sauce\t1.0
cat\tIsA\tanimal\t2.0
cat\tCapableOf\tsleeping\t1.0
keyboard\tPartOf\tcomputer\t1.0
kitchen\tUsedFor\tcooking\t2.0
oven\tAtLocation\tkitchen\t1.0
oven\tUsedFor\tbaking\t1.0
cooking\tRelatedTo\tfood\t1.0
"""

DIM = 48


@pytest.fixture(scope="module")
def extracted(toy_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("extracted")
    code = extract_main([
        "extract", "--dataset", str(toy_dataset), "--out", str(out / "manifest.jsonl"),
        "--dim", str(DIM),
    ])
    assert code == 0
    return out


def make_config(extracted, workdir, scorer="cosine", lambda_kd=0.5):
    kg_path = workdir / "kg.tsv"
    kg_path.write_text(TOY_KG)
    tree = {
        "seed": 3,
        "paths": {
            "manifest": str(extracted / "manifest.jsonl"),
            "kg_edges": str(kg_path),
            "node_embeddings": str(workdir / "node_embeddings.txt"),
            "external_scores": str(workdir / "external_scores.jsonl"),
            "workdir": str(workdir),
        },
        "knowledge": {"enabled": True, "hops": 2, "top_k": 10, "scorer": scorer},
        "model": {
            "gnn": {"arch": "rgcn", "layers": 1, "hidden_dim": 8, "out_dim": 8},
            "align": {"fused_dim": 8, "mapping_layers": 1},
            "fusion": {"kind": "gated", "dim": 8},
            "classifier": {"pre_output_layers": 1, "hidden_dim": 8},
        },
        "loss": {"lambda_bce": 1.0, "lambda_kd": lambda_kd},
        "train": {"epochs": 2, "batch_size": 2, "lr": 0.003},
    }
    cfg_path = workdir / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(tree))
    return cfg_path


def test_manifest_validates_with_zero_warnings(extracted):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        records = knowfuse_dataio.load_manifest(
            extracted / "manifest.jsonl", require_captions=True
        )
    assert [r.id for r in records] == ["t1", "t2", "t3"]
    assert records[0].e_img.shape == (DIM,)
    assert records[0].w_caption.shape == (DIM,)


def test_full_pipeline_on_extracted_files(extracted, tmp_path):
    cfg = make_config(extracted, tmp_path)
    assert knowfuse_cli.main(["kg-ingest", "--config", str(cfg)]) == 0
    # node-label embeddings come from the extractor, matching record dims
    assert extract_main([
        "embed-labels", "--labels", str(tmp_path / "kg_labels.txt"),
        "--out", str(tmp_path / "node_embeddings.txt"), "--dim", str(DIM),
    ]) == 0
    for command in ("ground", "score-relevance", "build-graphs", "train", "eval", "predict"):
        assert knowfuse_cli.main([command, "--config", str(cfg)]) == 0, command
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics["counts"]) == {"tp", "fp", "tn", "fn"}
    graphs = (tmp_path / "graphs.jsonl").read_text().splitlines()
    assert len(graphs) == 4  # header + one working graph per record
    # grounded concepts reached the graphs: t1 mentions pasta + garlic sauce
    t1 = json.loads(graphs[1])
    labels = {node["label"] for node in t1["nodes"]}
    assert "pasta" in labels and "garlic_sauce" in labels


def test_external_perplexity_scorer_path(extracted, tmp_path):
    cfg = make_config(extracted, tmp_path, scorer="external")
    assert knowfuse_cli.main(["kg-ingest", "--config", str(cfg)]) == 0
    assert extract_main([
        "embed-labels", "--labels", str(tmp_path / "kg_labels.txt"),
        "--out", str(tmp_path / "node_embeddings.txt"), "--dim", str(DIM),
    ]) == 0
    assert knowfuse_cli.main(["ground", "--config", str(cfg)]) == 0
    # the extractor scores the candidate concepts for every record
    assert extract_main([
        "score", "--manifest", str(extracted / "manifest.jsonl"),
        "--graphs", str(tmp_path / "candidates.jsonl"),
        "--out", str(tmp_path / "external_scores.jsonl"),
    ]) == 0
    for command in ("score-relevance", "build-graphs", "train", "eval"):
        assert knowfuse_cli.main([command, "--config", str(cfg)]) == 0, command
    scores_header = json.loads((tmp_path / "scores.jsonl").read_text().splitlines()[0])
    assert scores_header["direction"] == "lower"
