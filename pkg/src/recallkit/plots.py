"""Figure rendering for the report path (PNG files next to the CSV exports)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchReport, ObservationCurves
from .similarity import SimilarityTable

__all__ = ["render_retention", "render_observation", "render_similarity_curves"]

# keep PNG bytes identical across runs for manifest/artifact reproducibility
_PNG_META = {"metadata": {"Software": None}}


def render_retention(report: BenchReport, path) -> None:
    """Accuracy per seen task at every sequential step, first task highlighted."""
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [s["step"] for s in report.steps]
    for task in report.task_names:
        xs = [s["step"] for s in report.steps if task in s["accuracies"]]
        ys = [s["accuracies"][task] for s in report.steps if task in s["accuracies"]]
        ax.plot(xs, ys, marker="o", linewidth=2 if task == report.task_names[0] else 1.2,
                label=task)
    ax.set_xticks(steps)
    ax.set_xlabel("sequential step")
    ax.set_ylabel("exact-match accuracy")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(f"sequential scenario: {report.method}")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, **_PNG_META)
    plt.close(fig)


def render_observation(curves: ObservationCurves, intra_path, inter_path) -> None:
    """Adjacent-layer and inter-model similarity curves."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_model: dict[str, list[tuple[int, float]]] = {}
    for row in curves.intra:
        by_model.setdefault(row["model"], []).append((row["layer_from"], row["value"]))
    for model, points in by_model.items():
        xs, ys = zip(*sorted(points))
        ax.plot(xs, ys, marker="o", label=model)
    ax.set_xlabel("layer boundary")
    ax.set_ylabel(f"adjacent-layer {curves.metric}")
    ax.set_title("within-model representation shift")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(intra_path, dpi=150, **_PNG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    by_pair: dict[str, list[tuple[int, float]]] = {}
    for row in curves.inter:
        key = f"{row['model_p']} vs {row['model_q']}"
        by_pair.setdefault(key, []).append((row["layer"], row["value"]))
    for pair, points in by_pair.items():
        xs, ys = zip(*sorted(points))
        ax.plot(xs, ys, marker="o", label=pair)
    ax.set_xlabel("layer")
    ax.set_ylabel(f"inter-model {curves.metric}")
    ax.set_title("cross-model representation divergence")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(inter_path, dpi=150, **_PNG_META)
    plt.close(fig)


def render_similarity_curves(table: SimilarityTable, path) -> None:
    """Per-pair similarity across layers from a built table."""
    fig, ax = plt.subplots(figsize=(6, 4))
    layers = np.arange(table.num_layers)
    for i, p in enumerate(table.model_ids):
        for j in range(i + 1, len(table.model_ids)):
            ax.plot(layers, table.values[:, i, j], marker="o",
                    label=f"{p} vs {table.model_ids[j]}")
    ax.set_xticks(layers)
    ax.set_xlabel("layer")
    ax.set_ylabel(f"{table.metric} similarity")
    ax.set_title(f"layer-wise {table.metric} (sigma={table.sigma:g})")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, **_PNG_META)
    plt.close(fig)
