"""Evaluation and training reports: metric files plus rendered figures.

Every report stage writes a machine-readable delimited file next to
the figures so downstream tooling never has to parse an image. Figures
are rendered with the Agg backend and stripped of volatile metadata,
keeping re-runs byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport

_SAVEFIG_KW = {"dpi": 120, "metadata": {"Software": None}}


def write_metrics_files(report: MetricsReport, outdir: str | Path) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    json_path = outdir / "metrics.json"
    json_path.write_text(report.to_json(), encoding="utf-8")
    csv_path = outdir / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["accuracy", report.accuracy])
        writer.writerow(["precision", report.precision])
        writer.writerow(["recall", report.recall])
        writer.writerow(["f1", report.f1])
        writer.writerow(["auc", "" if report.auc is None else report.auc])
        for name in ("tp", "fp", "tn", "fn"):
            writer.writerow([name, getattr(report, name)])
        writer.writerow(["threshold", "" if report.threshold is None else report.threshold])
        writer.writerow(["flags", ";".join(report.flags)])
    return {"json": json_path, "csv": csv_path}


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """FPR/TPR staircase over descending score thresholds."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    tps = np.cumsum(labels == 1)
    fps = np.cumsum(labels == 0)
    n_pos = max(int((labels == 1).sum()), 1)
    n_neg = max(int((labels == 0).sum()), 1)
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    return fpr, tpr


def plot_roc(scores, labels, path: str | Path, auc_value: float | None = None) -> Path:
    fpr, tpr = roc_points(scores, labels)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    label = "ROC" if auc_value is None else f"ROC (AUC = {auc_value:.4f})"
    ax.plot(fpr, tpr, drawstyle="steps-post", label=label)
    ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)


def plot_score_histogram(scores, labels, path: str | Path) -> Path:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    bins = np.linspace(0.0, 1.0, 21)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="label 0")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="label 1")
    ax.set_xlabel("predicted score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)


def plot_training_curves(log_rows: list[dict], path: str | Path) -> Path:
    epochs = [row["epoch"] for row in log_rows]
    fig, (ax_loss, ax_auc) = plt.subplots(1, 2, figsize=(8.5, 3.5))
    ax_loss.plot(epochs, [row["train_total"] for row in log_rows], label="total")
    ax_loss.plot(epochs, [row["train_cls"] for row in log_rows], label="classification")
    ax_loss.plot(epochs, [row["train_kd"] for row in log_rows], label="distillation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_auc.plot(epochs, [row["val_auc"] for row in log_rows], color="tab:green")
    ax_auc.set_xlabel("epoch")
    ax_auc.set_ylabel("validation AUC")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
    return Path(path)
