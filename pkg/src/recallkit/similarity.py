"""Per-layer inter-model representation similarity under five metrics.

The table builder fills a full symmetric layer x model x model array.
Self-entries are pinned to each metric's analytic self-value (1 for RBF,
cosine and CKA; 0 for MMD and normalized Euclidean distance).

Note the Euclidean metric is a normalized *distance* (larger = farther) and
MMD is a divergence; converting them into merge signals is the merge engine's
job, the table stores the formula values verbatim.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessError, InputError, NumericDomainError
from .extraction import RepresentationSet, require_aligned

__all__ = [
    "SimilarityTable",
    "SELF_VALUES",
    "rbf_similarity",
    "cosine_similarity",
    "euclidean_similarity",
    "cka_similarity",
    "mmd_similarity",
    "build_table",
    "write_table_csv",
    "load_table",
]

METRICS = ("rbf", "cosine", "euclidean", "cka", "mmd")
SELF_VALUES = {"rbf": 1.0, "cosine": 1.0, "cka": 1.0, "mmd": 0.0, "euclidean": 0.0}


@dataclass
class SimilarityTable:
    metric: str
    sigma: float
    model_ids: list[str]
    values: np.ndarray  # (n_layers, n_models, n_models) float64, symmetric
    meta: dict = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return int(self.values.shape[0])

    def index_of(self, model_id: str) -> int:
        try:
            return self.model_ids.index(model_id)
        except ValueError:
            raise CompletenessError(f"model {model_id!r} is not in the similarity table") from None

    def value(self, layer: int, p: str, q: str) -> float:
        return float(self.values[layer, self.index_of(p), self.index_of(q)])

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric": self.metric,
                "sigma": self.sigma,
                "model_ids": self.model_ids,
                "values": self.values.tolist(),
                "meta": self.meta,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimilarityTable":
        data = json.loads(text)
        return cls(
            metric=data["metric"],
            sigma=float(data["sigma"]),
            model_ids=[str(m) for m in data["model_ids"]],
            values=np.asarray(data["values"], dtype=np.float64),
            meta=data.get("meta", {}),
        )


def _check_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise NumericDomainError(f"sigma must be > 0, got {sigma}")
    return float(sigma)


def _paired_rows(reps_p: RepresentationSet, reps_q: RepresentationSet, layer: int):
    require_aligned(reps_p, reps_q)
    if not 0 <= layer < reps_p.num_layers:
        raise InputError(f"layer {layer} out of range (have {reps_p.num_layers})")
    return reps_p.layers[layer].astype(np.float64), reps_q.layers[layer].astype(np.float64)


def rbf_similarity(
    reps_p: RepresentationSet, reps_q: RepresentationSet, layer: int, sigma: float = 1.0
) -> float:
    """Mean over paired samples of exp(-||r_p - r_q||^2 / (2 sigma^2))."""
    sigma = _check_sigma(sigma)
    xp, xq = _paired_rows(reps_p, reps_q, layer)
    d2 = np.sum((xp - xq) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * sigma * sigma))))


def cosine_similarity(reps_p: RepresentationSet, reps_q: RepresentationSet, layer: int) -> float:
    """Mean over paired samples of the cosine between row vectors."""
    xp, xq = _paired_rows(reps_p, reps_q, layer)
    np_norm = np.linalg.norm(xp, axis=1)
    nq_norm = np.linalg.norm(xq, axis=1)
    if np.any(np_norm == 0.0) or np.any(nq_norm == 0.0):
        raise NumericDomainError(f"cosine undefined: zero-norm representation at layer {layer}")
    return float(np.mean(np.sum(xp * xq, axis=1) / (np_norm * nq_norm)))


def euclidean_similarity(
    reps_by_model: dict[str, RepresentationSet], layer: int
) -> dict[tuple[str, str], float]:
    """Pairwise sample distances normalized by the layer-wide maximum.

    The unique maximal (pair, sample) distance pins that pair's contribution
    to 1; identical models map to 0.  A degenerate layer (all distances zero)
    yields all zeros.
    """
    ids = list(reps_by_model)
    if len(ids) < 2:
        raise InputError("euclidean similarity needs at least 2 models")
    rows = {}
    for mid in ids:
        x, _ = _paired_rows(reps_by_model[mid], reps_by_model[ids[0]], layer)
        rows[mid] = x
    dists = {}
    max_dist = 0.0
    for i, p in enumerate(ids):
        for q in ids[i + 1 :]:
            d = np.linalg.norm(rows[p] - rows[q], axis=1)
            dists[(p, q)] = d
            max_dist = max(max_dist, float(d.max()))
    out: dict[tuple[str, str], float] = {}
    for (p, q), d in dists.items():
        value = 0.0 if max_dist == 0.0 else float(np.mean(d / max_dist))
        out[(p, q)] = out[(q, p)] = value
    for p in ids:
        out[(p, p)] = 0.0
    return out


def cka_similarity(x: np.ndarray, y: np.ndarray, centered: bool = True) -> float:
    """Linear centered kernel alignment between (m, E) feature matrices."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InputError(f"cka expects (m, E) matrices with equal m, got {x.shape}, {y.shape}")
    if x.shape[0] < 2:
        raise InputError("cka needs at least 2 samples")
    if centered:
        x = x - x.mean(axis=0, keepdims=True)
        y = y - y.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(x.T @ y, "fro") ** 2
    denom = np.linalg.norm(x.T @ x, "fro") * np.linalg.norm(y.T @ y, "fro")
    if denom == 0.0:
        raise NumericDomainError("cka undefined for zero-variance feature matrices")
    return float(np.clip(cross / denom, 0.0, 1.0))


def _pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xx = np.sum(x * x, axis=1)[:, None]
    yy = np.sum(y * y, axis=1)[None, :]
    return np.maximum(xx + yy - 2.0 * (x @ y.T), 0.0)


def mmd_similarity(x: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> float:
    """Squared maximum mean discrepancy (biased V-statistic) under an RBF kernel."""
    sigma = _check_sigma(sigma)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise InputError(f"mmd expects (n, E) and (m, E) matrices, got {x.shape}, {y.shape}")
    s2 = 2.0 * sigma * sigma
    k_xx = np.exp(-_pairwise_sq_dists(x, x) / s2).mean()
    k_yy = np.exp(-_pairwise_sq_dists(y, y) / s2).mean()
    k_xy = np.exp(-_pairwise_sq_dists(x, y) / s2).mean()
    return float(k_xx + k_yy - 2.0 * k_xy)


def build_table(
    reps_by_model: dict[str, RepresentationSet],
    typical_ids: list[str] | None = None,
    metric: str = "rbf",
    sigma: float = 1.0,
    cka_centered: bool = True,
) -> SimilarityTable:
    """Full symmetric similarity table over every layer and model pair."""
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}, expected one of {METRICS}")
    if metric in ("rbf", "mmd"):
        _check_sigma(sigma)
    if len(reps_by_model) < 2:
        raise CompletenessError("similarity table needs at least 2 models")

    ids = list(reps_by_model)
    reps = {
        mid: (r if typical_ids is None else r.subset(typical_ids))
        for mid, r in reps_by_model.items()
    }
    first = reps[ids[0]]
    for mid in ids[1:]:
        require_aligned(first, reps[mid])
    n_layers = first.num_layers
    if n_layers == 0:
        raise CompletenessError("representation sets contain no layers")

    values = np.zeros((n_layers, len(ids), len(ids)), dtype=np.float64)
    for layer in range(n_layers):
        if metric == "euclidean":
            pairwise = euclidean_similarity(reps, layer)
            for i, p in enumerate(ids):
                for j, q in enumerate(ids):
                    values[layer, i, j] = pairwise[(p, q)]
            continue
        for i, p in enumerate(ids):
            values[layer, i, i] = SELF_VALUES[metric]
            for j in range(i + 1, len(ids)):
                q = ids[j]
                if metric == "rbf":
                    v = rbf_similarity(reps[p], reps[q], layer, sigma)
                elif metric == "cosine":
                    v = cosine_similarity(reps[p], reps[q], layer)
                elif metric == "cka":
                    xp, xq = _paired_rows(reps[p], reps[q], layer)
                    v = cka_similarity(xp, xq, centered=cka_centered)
                else:
                    xp, xq = _paired_rows(reps[p], reps[q], layer)
                    v = mmd_similarity(xp, xq, sigma)
                values[layer, i, j] = values[layer, j, i] = v

    meta = {"cka_centered": cka_centered} if metric == "cka" else {}
    return SimilarityTable(metric=metric, sigma=float(sigma), model_ids=ids, values=values, meta=meta)


def write_table_csv(table: SimilarityTable, path) -> None:
    """Delimited export, one row per (layer, p, q) including self pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "p", "q", "value"])
        for layer in range(table.num_layers):
            for i, p in enumerate(table.model_ids):
                for j, q in enumerate(table.model_ids):
                    writer.writerow([layer, p, q, repr(table.values[layer, i, j])])


def load_table(path) -> SimilarityTable:
    with open(path) as fh:
        return SimilarityTable.from_json(fh.read())
