import itertools
import json

import pytest

from memeextract.jobs import run_score
from memeextract.perplexity import CachePerplexityScorer

COOKING_CONTEXTS = [
    "cooking pasta with garlic sauce in the kitchen tonight",
    "the oven smoked while baking bread in our kitchen",
    "fresh garlic and olive oil make the best pasta sauce",
    "dinner recipe with tomato sauce and grilled vegetables",
    "chef plating pasta beside the stove in a busy kitchen",
    "baking a cake while the kitchen timer keeps ringing",
]

ON_TOPIC = ["pasta", "kitchen", "garlic_sauce", "oven", "baking", "dinner_recipe",
            "tomato", "chef", "stove", "olive_oil"]
OFF_TOPIC = ["quasar", "gearbox", "parliament", "glacier", "trombone", "hexadecimal",
             "volleyball", "chloroplast", "submarine", "tundra"]


def test_on_topic_scores_lower_in_most_pairs():
    scorer = CachePerplexityScorer(COOKING_CONTEXTS)
    context = COOKING_CONTEXTS[0] + " " + COOKING_CONTEXTS[1]
    on = {c: scorer.score(context, c) for c in ON_TOPIC}
    off = {c: scorer.score(context, c) for c in OFF_TOPIC}
    pairs = list(itertools.product(ON_TOPIC, OFF_TOPIC))
    correct = sum(1 for a, b in pairs if on[a] < off[b])
    assert correct / len(pairs) >= 0.9


def test_scores_finite_and_positive():
    scorer = CachePerplexityScorer(COOKING_CONTEXTS)
    for concept in ON_TOPIC + OFF_TOPIC:
        score = scorer.score("random unrelated context", concept)
        assert score > 0.0
        assert score < float("inf")


def test_identical_pairs_identical_scores():
    scorer = CachePerplexityScorer(COOKING_CONTEXTS)
    a = scorer.score(COOKING_CONTEXTS[2], "pasta")
    b = scorer.score(COOKING_CONTEXTS[2], "pasta")
    assert a == b


def test_empty_label_raises():
    scorer = CachePerplexityScorer(COOKING_CONTEXTS)
    with pytest.raises(ValueError):
        scorer.score("context", "___")


def make_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "manifest", "schema_version": 1}) + "\n")
        for rid, text, caption in records:
            fh.write(json.dumps({
                "id": rid, "text": text, "caption": caption, "label": 0,
                "split": "train", "embeddings": {},
            }) + "\n")


def make_candidates(path, per_record):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "subgraph_candidates", "schema_version": 1,
                             "hops": 1}) + "\n")
        for rid, labels in per_record.items():
            nodes = [[i, label, 1] for i, label in enumerate(labels)]
            fh.write(json.dumps({"record_id": rid, "nodes": nodes, "edges": []}) + "\n")


def test_run_score_emits_external_format(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    make_manifest(manifest, [("m1", COOKING_CONTEXTS[0], COOKING_CONTEXTS[1])])
    candidates = tmp_path / "candidates.jsonl"
    make_candidates(candidates, {"m1": ["pasta", "quasar"]})
    out = run_score(manifest, candidates, tmp_path / "scores.jsonl")
    assert out["rows"] == 2
    rows = [json.loads(l) for l in (tmp_path / "scores.jsonl").read_text().splitlines()]
    by_concept = {r["concept"]: r["score"] for r in rows}
    assert set(rows[0]) == {"record_id", "concept", "score"}
    assert by_concept["pasta"] < by_concept["quasar"]


def test_run_score_empty_candidates(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    make_manifest(manifest, [("m1", "text", "caption")])
    candidates = tmp_path / "candidates.jsonl"
    make_candidates(candidates, {"m1": []})
    out = run_score(manifest, candidates, tmp_path / "scores.jsonl")
    assert out["rows"] == 0
    assert (tmp_path / "scores.jsonl").read_text() == ""


def test_run_score_skips_unscoreable_labels(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    make_manifest(manifest, [("m1", "text", "caption")])
    candidates = tmp_path / "candidates.jsonl"
    make_candidates(candidates, {"m1": ["kitchen", "___"]})
    with pytest.warns(UserWarning, match="skipping concept"):
        out = run_score(manifest, candidates, tmp_path / "scores.jsonl")
    assert out["rows"] == 1
    assert out["skipped"] == 1


def test_run_score_determinism(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    make_manifest(manifest, [("m1", COOKING_CONTEXTS[0], COOKING_CONTEXTS[3])])
    candidates = tmp_path / "candidates.jsonl"
    make_candidates(candidates, {"m1": ON_TOPIC})
    run_score(manifest, candidates, tmp_path / "a.jsonl")
    run_score(manifest, candidates, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
