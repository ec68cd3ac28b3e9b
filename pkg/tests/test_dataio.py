import json
import warnings

import numpy as np
import pytest

from knowfuse.dataio import (
    BlobReader,
    BlobWriter,
    load_manifest,
    load_node_embeddings,
    write_manifest,
    write_node_embeddings,
)
from knowfuse.errors import DataError, LookupMissingError


def make_blob(tmp_path, entries, name="embs.bin"):
    writer = BlobWriter()
    for key, vec in entries.items():
        writer.add(key, vec)
    path = tmp_path / name
    writer.save(path)
    return path


def blob_ref(key, blob="embs.bin"):
    return {"blob": blob, "key": key}


def record_row(record_id, label=0, split="train", caption_key=True, inline=None):
    if inline is not None:
        embs = {
            "e_img": {"inline": inline},
            "e_txt": {"inline": inline},
            "context_vec": {"inline": inline},
        }
        if caption_key:
            embs["w_caption"] = {"inline": inline}
    else:
        embs = {
            "e_img": blob_ref(f"{record_id}/img"),
            "e_txt": blob_ref(f"{record_id}/txt"),
            "context_vec": blob_ref(f"{record_id}/ctx"),
        }
        if caption_key:
            embs["w_caption"] = blob_ref(f"{record_id}/cap")
    return {
        "id": record_id,
        "text": f"text {record_id}",
        "caption": f"caption {record_id}",
        "label": label,
        "split": split,
        "embeddings": embs,
    }


def write_rows(tmp_path, rows, name="manifest.jsonl"):
    path = tmp_path / name
    write_manifest(path, rows)
    return path


@pytest.fixture()
def two_record_setup(tmp_path):
    entries = {}
    rng = np.random.default_rng(0)
    for rid in ("m1", "m2"):
        for part in ("img", "txt", "ctx", "cap"):
            entries[f"{rid}/{part}"] = rng.normal(size=4)
    make_blob(tmp_path, entries)
    path = write_rows(tmp_path, [record_row("m1", label=1), record_row("m2")])
    return tmp_path, path


def test_blob_round_trip(tmp_path):
    vec = np.array([0.1, -2.5, 3.25], dtype=np.float64)
    path = make_blob(tmp_path, {"a": vec, "b": [1.0, 2.0]})
    reader = BlobReader(path)
    got = reader.read("a")
    np.testing.assert_array_equal(got, vec.astype(np.float32).astype(np.float64))
    assert reader.dim("b") == 2


def test_blob_missing_key(tmp_path):
    path = make_blob(tmp_path, {"a": [1.0]})
    with pytest.raises(LookupMissingError):
        BlobReader(path).read("zzz")


def test_blob_rejects_duplicate_keys():
    writer = BlobWriter()
    writer.add("a", [1.0])
    with pytest.raises(DataError):
        writer.add("a", [2.0])


def test_blob_rejects_non_blob_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"garbage")
    with pytest.raises(DataError):
        BlobReader(path)


def test_load_manifest_two_records(two_record_setup):
    _, path = two_record_setup
    records = load_manifest(path, require_captions=True)
    assert [r.id for r in records] == ["m1", "m2"]
    assert records[0].label == 1
    assert records[0].e_img.shape == (4,)
    assert records[0].w_caption.dtype == np.float64


def test_load_manifest_missing_caption_with_kd(tmp_path):
    rows = [record_row("m1", caption_key=False, inline=[1.0, 2.0])]
    path = write_rows(tmp_path, rows)
    with pytest.raises(DataError, match="m1"):
        load_manifest(path, require_captions=True)
    # without distillation the same manifest loads fine
    records = load_manifest(path, require_captions=False)
    assert not records[0].has_caption_embedding


def test_inline_equals_blob_variant(tmp_path):
    vec = [0.5, -1.5, 2.0]
    make_blob(tmp_path, {"m1/img": vec, "m1/txt": vec, "m1/ctx": vec, "m1/cap": vec})
    blob_path = write_rows(tmp_path, [record_row("m1")], name="blob.jsonl")
    inline_path = write_rows(tmp_path, [record_row("m1", inline=vec)], name="inline.jsonl")
    a = load_manifest(blob_path)[0]
    b = load_manifest(inline_path)[0]
    np.testing.assert_allclose(a.e_img, b.e_img, atol=1e-7)
    assert a.id == b.id and a.label == b.label


def test_dangling_ref_is_load_error(tmp_path):
    make_blob(tmp_path, {"m1/img": [1.0], "m1/txt": [1.0], "m1/cap": [1.0]})
    path = write_rows(tmp_path, [record_row("m1")])  # ctx key missing from blob
    with pytest.raises(DataError, match="dangling"):
        load_manifest(path)


def test_missing_blob_file_is_load_error(tmp_path):
    path = write_rows(tmp_path, [record_row("m1")])
    with pytest.raises(DataError, match="not found"):
        load_manifest(path)


def test_label_outside_class_count(tmp_path):
    path = write_rows(tmp_path, [record_row("m1", label=3, inline=[1.0])])
    with pytest.raises(DataError, match="label"):
        load_manifest(path, num_classes=2)
    records = load_manifest(path, num_classes=4)
    assert records[0].label == 3


def test_schema_violation_reports_line_number(tmp_path):
    path = tmp_path / "manifest.jsonl"
    header = {"schema_version": 1, "kind": "manifest"}
    bad = {"id": "m1", "text": "t"}  # missing fields
    path.write_text(json.dumps(header) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(DataError, match=":2:"):
        load_manifest(path)


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(json.dumps({"kind": "other"}) + "\n")
    with pytest.raises(DataError, match="header"):
        load_manifest(path)


def test_duplicate_ids_rejected(tmp_path):
    rows = [record_row("m1", inline=[1.0]), record_row("m1", inline=[1.0])]
    path = write_rows(tmp_path, rows)
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(path)


def test_manifest_order_preserving(tmp_path):
    rows = [record_row(f"m{i}", inline=[float(i)]) for i in range(7)]
    path = write_rows(tmp_path, rows)
    records = load_manifest(path)
    assert [r.id for r in records] == [f"m{i}" for i in range(7)]


def test_header_dims_mismatch_warns(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, [record_row("m1", inline=[1.0, 2.0])], dims={"e_img": 3})
    with pytest.warns(UserWarning, match="dim"):
        load_manifest(path)


def test_header_dims_match_is_silent(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest(
        path,
        [record_row("m1", inline=[1.0, 2.0])],
        dims={"e_img": 2, "e_txt": 2, "context_vec": 2, "w_caption": 2},
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_manifest(path)


def test_node_embeddings_format(tmp_path):
    path = tmp_path / "nodes.txt"
    path.write_text("2 3\nalpha 0.1 0.2 0.3\nbeta 1.0 -1.0 0.5\n")
    table = load_node_embeddings(path)
    assert set(table) == {"alpha", "beta"}
    assert table["alpha"].shape == (3,)


def test_node_embeddings_duplicate_label(tmp_path):
    path = tmp_path / "nodes.txt"
    path.write_text("2 2\na 1 2\na 3 4\n")
    with pytest.raises(DataError, match="duplicate"):
        load_node_embeddings(path)


def test_node_embeddings_dim_inconsistency(tmp_path):
    path = tmp_path / "nodes.txt"
    path.write_text("2 3\na 1 2 3\nb 1 2\n")
    with pytest.raises(DataError):
        load_node_embeddings(path)


def test_node_embeddings_count_mismatch(tmp_path):
    path = tmp_path / "nodes.txt"
    path.write_text("3 2\na 1 2\nb 3 4\n")
    with pytest.raises(DataError, match="claims 3"):
        load_node_embeddings(path)


def test_node_embeddings_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    table = {f"concept_{i}": rng.normal(size=5) for i in range(6)}
    path = tmp_path / "nodes.txt"
    write_node_embeddings(table, path)
    loaded = load_node_embeddings(path)
    for label, vec in table.items():
        original32 = np.asarray(vec, dtype=np.float32)
        np.testing.assert_array_equal(loaded[label].astype(np.float32), original32)
