"""K-means over representations and typical-sample selection.

Lloyd's algorithm with seeded k-means++ initialization.  All tie-breaks
resolve to the lowest index, so a fixed seed reproduces the same clusters and
the same typical dataset on every run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .extraction import RepresentationSet

__all__ = ["KMeansResult", "TypicalDataset", "kmeans", "select_typical"]


@dataclass
class KMeansResult:
    centers: np.ndarray  # (k, E) float32
    assignment: np.ndarray  # (n,) int, nearest-center index per sample
    inertia: float  # sum of squared distances to assigned centers


@dataclass
class TypicalDataset:
    """Ordered, de-duplicated sample ids standing in for the full dataset."""

    sample_ids: list[str]
    provenance: dict[str, list[int]] = field(default_factory=dict)  # id -> selecting layers
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"sample_ids": self.sample_ids, "provenance": self.provenance, "seed": self.seed},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TypicalDataset":
        data = json.loads(text)
        return cls(
            sample_ids=[str(s) for s in data["sample_ids"]],
            provenance={str(k): [int(i) for i in v] for k, v in data.get("provenance", {}).items()},
            seed=int(data.get("seed", 0)),
        )


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances in float64
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass coincides with chosen centers; fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; stops when assignments stabilize.

    Empty clusters keep their previous center.  Ties in the nearest-center
    assignment go to the lowest center index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InputError(f"kmeans expects an (n, E) matrix, got shape {pts.shape}")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must satisfy 1 <= k <= n_samples, got k={k}, n={n}")
    if max_iter < 1:
        raise InputError(f"max_iter must be >= 1, got {max_iter}")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = _kmeanspp_init(pts, k, rng)
    assignment = np.argmin(_sq_dists(pts, centers), axis=1)
    for _ in range(max_iter):
        for j in range(k):
            members = pts[assignment == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
        new_assignment = np.argmin(_sq_dists(pts, centers), axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    centers32 = centers.astype(np.float32)
    d2 = _sq_dists(pts, centers32.astype(np.float64))
    assignment = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assignment].sum())
    return KMeansResult(centers=centers32, assignment=assignment, inertia=inertia)


def _layer_selection(policy, num_layers: int) -> list[int]:
    if policy == "all":
        return list(range(num_layers))
    if policy == "last":
        return [num_layers - 1]
    layers = [int(i) for i in policy]
    if not layers:
        raise InputError("layer selection policy is empty")
    bad = [i for i in layers if not 0 <= i < num_layers]
    if bad:
        raise InputError(f"layer indices out of range: {bad} (have {num_layers} layers)")
    return layers


def select_typical(
    reps: RepresentationSet,
    m_per_layer: int,
    layers="all",
    seed: int = 0,
    max_iter: int = 100,
) -> TypicalDataset:
    """Cluster each selected layer and keep the sample nearest each center.

    Selections are unioned across layers in layer order, de-duplicated
    preserving first appearance.  Nearest-sample ties go to the lowest sample
    index.
    """
    if m_per_layer < 1 or m_per_layer > reps.num_samples:
        raise InputError(
            f"m_per_layer must satisfy 1 <= m <= n_samples, got {m_per_layer} of {reps.num_samples}"
        )
    selected = _layer_selection(layers, reps.num_layers)

    chosen: list[str] = []
    provenance: dict[str, list[int]] = {}
    for layer_idx in selected:
        layer_seed = int(np.random.SeedSequence(seed, spawn_key=(layer_idx,)).generate_state(1)[0])
        result = kmeans(reps.layers[layer_idx], m_per_layer, seed=layer_seed, max_iter=max_iter)
        points = reps.layers[layer_idx].astype(np.float64)
        for center in result.centers.astype(np.float64):
            nearest = int(np.argmin(np.sum((points - center) ** 2, axis=1)))
            sid = reps.sample_ids[nearest]
            if sid not in provenance:
                chosen.append(sid)
                provenance[sid] = []
            if layer_idx not in provenance[sid]:
                provenance[sid].append(layer_idx)
    return TypicalDataset(sample_ids=chosen, provenance=provenance, seed=seed)
