"""Report rendering: canonical JSON, delimited per-class tables, figures.

The JSON writer is byte-deterministic (sorted keys, repr floats) so
repeated evaluations of the same bundle compare equal. Figures land next
to the report with derived names.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport


def write_json(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def write_metrics_csv(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["class", "support", "recall", "uacc_pm1", "umse", "undefined"]
        )
        for cls in sorted(report.per_class):
            row = report.per_class[cls]
            writer.writerow(
                [
                    cls,
                    row["support"],
                    f"{row['recall']:.6f}",
                    f"{row['uacc_pm1']:.6f}",
                    f"{row['umse']:.6f}",
                    row["undefined"],
                ]
            )
        writer.writerow(
            [
                "macro",
                report.n,
                f"{report.acc_k / 100.0:.6f}",
                f"{report.acc_pm1 / 100.0:.6f}",
                f"{report.mse:.6f}",
                report.undefined_count,
            ]
        )
    return path


def plot_confusion(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    matrix = np.asarray(report.confusion, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xlabel("predicted level")
    ax.set_ylabel("true level")
    ax.set_xticks(range(report.k), [str(i + 1) for i in range(report.k)])
    ax.set_yticks(range(report.k), [str(i + 1) for i in range(report.k)])
    threshold = matrix.max() / 2.0 if matrix.size else 0.0
    for i in range(report.k):
        for j in range(report.k):
            value = int(matrix[i, j])
            if value:
                ax.text(
                    j, i, str(value), ha="center", va="center",
                    color="white" if matrix[i, j] < threshold else "black",
                    fontsize=8,
                )
    fig.colorbar(im, ax=ax, label="count")
    ax.set_title(
        f"confusion (n={report.n}, undefined={report.undefined_count})"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_per_class(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    classes = sorted(report.per_class)
    recall = [100.0 * report.per_class[c]["recall"] for c in classes]
    within = [100.0 * report.per_class[c]["uacc_pm1"] for c in classes]
    umse = [report.per_class[c]["umse"] for c in classes]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = np.arange(len(classes))
    width = 0.38
    ax1.bar(x - width / 2, recall, width, label="recall")
    ax1.bar(x + width / 2, within, width, label="acc within 1")
    ax1.set_xticks(x, [str(c) for c in classes])
    ax1.set_xlabel("level")
    ax1.set_ylabel("%")
    ax1.set_ylim(0, 105)
    ax1.legend(fontsize=8)
    ax1.set_title(f"per-level accuracy (macro {report.acc_k:.1f}%)")
    ax2.bar(x, umse, color="firebrick")
    ax2.set_xticks(x, [str(c) for c in classes])
    ax2.set_xlabel("level")
    ax2.set_ylabel("squared error")
    ax2.set_title(f"per-level error (macro {report.mse:.2f})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_training_curves(history: list[dict], path: str | Path) -> Path:
    path = Path(path)
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(epochs, [h["train_loss"] for h in history], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [h["train_acc_k"] for h in history], label="train acc")
    ax2.plot(epochs, [h["val_acc_k"] for h in history], label="val acc")
    best = max(history, key=lambda h: (h["val_acc_k"], -h["val_mse"]))
    ax2.axvline(best["epoch"], color="gray", linestyle=":", linewidth=1)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("acc (%)")
    ax2.set_ylim(0, 105)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report(
    payload: dict,
    report: MetricsReport,
    out_json: str | Path,
    figures: bool = True,
) -> list[Path]:
    """Write the JSON report plus CSV and figures beside it."""
    out_json = Path(out_json)
    written = [write_json(payload, out_json)]
    stem = out_json.with_suffix("")
    written.append(write_metrics_csv(report, stem.with_suffix(".csv")))
    if figures:
        written.append(
            plot_confusion(report, Path(str(stem) + "_confusion.png"))
        )
        written.append(
            plot_per_class(report, Path(str(stem) + "_per_class.png"))
        )
    return written
