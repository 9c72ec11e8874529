"""Pooled per-layer representation vectors for a dataset under one model.

Extraction streams: each sample is forwarded, pooled into one vector per layer
boundary, and its hidden states are dropped immediately, so peak transient
memory stays proportional to ``batch_hint`` samples rather than the dataset.
Output rows are written into pre-assigned slots, making the result independent
of batch size and thread scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_store
from .checkpoint import Checkpoint
from .errors import AlignmentError, InputError
from .model import ModelConfig, forward, tokenize
from .util import parallel_map

__all__ = ["RepresentationSet", "pool", "extract", "save_representations", "load_representations"]


@dataclass
class RepresentationSet:
    """Per-layer (n_samples, E) float32 matrices with aligned sample ids."""

    model_id: str
    sample_ids: list[str]
    layers: list[np.ndarray] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    def subset(self, sample_ids: list[str]) -> "RepresentationSet":
        """Rows for the given sample ids, in the given order."""
        position = {sid: i for i, sid in enumerate(self.sample_ids)}
        missing = [sid for sid in sample_ids if sid not in position]
        if missing:
            raise AlignmentError(f"sample ids not present in representation set: {missing}")
        rows = [position[sid] for sid in sample_ids]
        return RepresentationSet(
            model_id=self.model_id,
            sample_ids=list(sample_ids),
            layers=[layer[rows] for layer in self.layers],
        )


def require_aligned(a: RepresentationSet, b: RepresentationSet) -> None:
    """Raise :class:`AlignmentError` unless both sets cover the same samples in order."""
    if a.sample_ids != b.sample_ids:
        raise AlignmentError(
            f"representation sets are misaligned: {a.model_id} vs {b.model_id}"
        )
    if a.num_layers != b.num_layers:
        raise AlignmentError(
            f"layer counts differ: {a.model_id} has {a.num_layers}, {b.model_id} has {b.num_layers}"
        )


def pool(hs_layer: np.ndarray) -> np.ndarray:
    """Token-mean of one layer's hidden states: (L_tok, E) -> (E,)."""
    if hs_layer.ndim != 2 or hs_layer.shape[0] < 1:
        raise InputError(f"pool expects a non-empty (tokens, E) matrix, got {hs_layer.shape}")
    return hs_layer.astype(np.float64).mean(axis=0).astype(np.float32)


def extract(
    ckpt: Checkpoint,
    cfg: ModelConfig,
    dataset: list[str],
    batch_hint: int = 8,
    model_id: str | None = None,
    sample_ids: list[str] | None = None,
    threads: int = 1,
) -> RepresentationSet:
    """Pooled vectors for every (layer, sample); output independent of batching."""
    if not dataset:
        raise InputError("dataset must be non-empty")
    if batch_hint < 1:
        raise InputError(f"batch_hint must be >= 1, got {batch_hint}")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(dataset))]
    elif len(sample_ids) != len(dataset):
        raise InputError("sample_ids length does not match dataset length")
    if model_id is None:
        model_id = ckpt.metadata.get("model_id", "model")

    n = len(dataset)
    out = [np.empty((n, cfg.embed_dim), dtype=np.float32) for _ in range(cfg.num_layers + 1)]

    def one_sample(idx: int) -> list[np.ndarray]:
        try:
            _, hidden = forward(ckpt, cfg, tokenize(dataset[idx], cfg))
            return [pool(h) for h in hidden]
        except Exception as exc:
            raise type(exc)(f"sample {idx}: {exc}") from exc

    for start in range(0, n, batch_hint):
        batch = list(range(start, min(start + batch_hint, n)))
        pooled = parallel_map(one_sample, batch, threads=threads)
        for idx, vectors in zip(batch, pooled):
            for layer, vec in enumerate(vectors):
                out[layer][idx] = vec

    return RepresentationSet(model_id=model_id, sample_ids=sample_ids, layers=out)


def save_representations(reps: RepresentationSet, path) -> None:
    """Persist to a ``.st`` sidecar (tensor names ``layer.{i}``) for reuse."""
    entries = {f"layer.{i}": layer for i, layer in enumerate(reps.layers)}
    metadata = {"model_id": reps.model_id, "sample_ids": json.dumps(reps.sample_ids)}
    ckpt_store.save(Checkpoint(entries=entries, metadata=metadata), path)


def load_representations(path) -> RepresentationSet:
    container = ckpt_store.load(path)
    indices = sorted(int(name.split(".", 1)[1]) for name in container.entries)
    if indices != list(range(len(indices))) or not indices:
        raise InputError(f"representation file {path} has non-contiguous layer names")
    layers = [container.entries[f"layer.{i}"] for i in indices]
    sample_ids = json.loads(container.metadata.get("sample_ids", "[]"))
    if any(layer.shape[0] != len(sample_ids) for layer in layers):
        raise AlignmentError(f"representation file {path} rows do not match sample ids")
    return RepresentationSet(
        model_id=container.metadata.get("model_id", "model"),
        sample_ids=[str(s) for s in sample_ids],
        layers=layers,
    )
