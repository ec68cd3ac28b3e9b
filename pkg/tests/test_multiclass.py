import json

import numpy as np
import yaml

from knowfuse.cli import main
from knowfuse.dataio import write_manifest


def make_multiclass_manifest(tmp_path, n=24, classes=3, dim=6, seed=4):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        label = i % classes
        shift = np.zeros(dim)
        shift[label] = 1.5
        split = "train" if i < n - 8 else ("val" if i < n - 4 else "test")
        vec = lambda: [float(v) for v in rng.normal(size=dim) * 0.4 + shift]
        rows.append(
            {
                "id": f"c{i}",
                "text": f"sample {i}",
                "caption": f"caption {i}",
                "label": label,
                "split": split,
                "embeddings": {
                    "e_img": {"inline": vec()},
                    "e_txt": {"inline": vec()},
                    "context_vec": {"inline": vec()},
                },
            }
        )
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, rows)
    return path


def test_three_class_train_eval_predict(tmp_path, capsys):
    manifest = make_multiclass_manifest(tmp_path)
    tree = {
        "seed": 6,
        "paths": {"manifest": str(manifest), "workdir": str(tmp_path)},
        "knowledge": {"enabled": False},
        "model": {
            "align": {"fused_dim": 8, "mapping_layers": 1},
            "classifier": {"pre_output_layers": 1, "hidden_dim": 8},
        },
        "loss": {"lambda_bce": 1.0, "lambda_kd": 0.0, "num_classes": 3},
        "train": {"epochs": 5, "batch_size": 4, "lr": 0.01},
    }
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump(tree))
    for command in ("train", "eval", "predict"):
        assert main([command, "--config", str(cfg)]) == 0, capsys.readouterr().err

    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["auc"] is None
    assert metrics["averaging"] == "weighted"
    assert 0.0 <= metrics["f1"] <= 1.0

    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "record_id,label,probs,prediction"
    probs = [float(p) for p in lines[1].split(",")[2].split(";")]
    assert len(probs) == 3
    assert abs(sum(probs) - 1.0) < 1e-9

    log_rows = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert log_rows[0]["val_metric"] == "weighted_f1"
