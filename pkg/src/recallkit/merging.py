"""Layer-wise merge weights and checkpoint merging (plus the baseline mergers).

The similarity-driven path turns one anchor row of a
:class:`~recallkit.similarity.SimilarityTable` into a softmax weight vector
per layer group.  Merging itself accumulates in float64 in model order, so the
result is bit-identical to a naive one-parameter-at-a-time loop.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, LayerGroupIndex, build_layer_index
from .errors import (
    CompatibilityError,
    CompletenessError,
    InputError,
    NumericDomainError,
)
from .model import ModelConfig, encode_example, forward
from .similarity import SimilarityTable
from .tensor import softmax64

__all__ = [
    "MergePlan",
    "merge_signal",
    "recall_weights",
    "merge",
    "uniform_merge",
    "task_vector_merge",
    "dare_sparsify",
    "validation_loss",
    "loss_weighted_plan",
    "loss_weighted_merge",
]

NORMALIZED_METHODS = ("recall", "uniform", "loss_weighted")


@dataclass
class MergePlan:
    """Per-group weight vectors over the participating models."""

    method: str
    model_ids: list[str]
    weights: np.ndarray  # (n_groups, n_models) float64
    include_base: bool = True
    hyperparameters: dict = field(default_factory=dict)

    @property
    def group_count(self) -> int:
        return int(self.weights.shape[0])

    def validate(self) -> None:
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.model_ids):
            raise InputError(
                f"weights shape {self.weights.shape} does not cover {len(self.model_ids)} models"
            )
        if not np.all(np.isfinite(self.weights)):
            raise NumericDomainError("merge plan contains non-finite weights")
        if self.method in NORMALIZED_METHODS:
            sums = self.weights.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise InputError(f"group weights must sum to 1, got sums {sums}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "model_ids": self.model_ids,
                "include_base": self.include_base,
                "weights": {str(g): row.tolist() for g, row in enumerate(self.weights)},
                "hyperparameters": self.hyperparameters,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MergePlan":
        data = json.loads(text)
        rows = data["weights"]
        weights = np.asarray([rows[str(g)] for g in range(len(rows))], dtype=np.float64)
        return cls(
            method=data["method"],
            model_ids=[str(m) for m in data["model_ids"]],
            weights=weights,
            include_base=bool(data.get("include_base", True)),
            hyperparameters=data.get("hyperparameters", {}),
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def merge_signal(table: SimilarityTable, euclidean_flip: bool = True) -> np.ndarray:
    """Table values transformed so that larger always means closer.

    Normalized Euclidean distance is flipped to 1 - d (unless disabled for
    verbatim reporting); MMD, a divergence, is negated.
    """
    if table.metric == "euclidean" and euclidean_flip:
        return 1.0 - table.values
    if table.metric == "mmd":
        return -table.values
    return table.values.copy()


def recall_weights(
    table: SimilarityTable,
    anchor_model: str,
    include_base: bool = True,
    base_model: str | None = None,
    temperature: float = 1.0,
    euclidean_flip: bool = True,
) -> MergePlan:
    """Softmax the anchor's similarity row into one weight vector per layer.

    Hidden-state layer i maps one-to-one onto merge group i (the embedding is
    group 0, trailing tensors ride with the last block's group).
    """
    if temperature <= 0:
        raise InputError(f"temperature must be > 0, got {temperature}")
    participants = list(table.model_ids)
    if not include_base:
        if base_model is None:
            raise InputError("include_base=False requires base_model to name the excluded model")
        if base_model not in participants:
            raise CompletenessError(f"base model {base_model!r} is not in the table")
        participants = [m for m in participants if m != base_model]
    if anchor_model not in participants:
        raise CompletenessError(f"anchor model {anchor_model!r} is not among the participants")

    signal = merge_signal(table, euclidean_flip=euclidean_flip)
    anchor_idx = table.index_of(anchor_model)
    cols = [table.index_of(m) for m in participants]
    weights = np.empty((table.num_layers, len(participants)), dtype=np.float64)
    for layer in range(table.num_layers):
        scores = signal[layer, anchor_idx, cols]
        weights[layer] = softmax64(scores / temperature)

    plan = MergePlan(
        method="recall",
        model_ids=participants,
        weights=weights,
        include_base=include_base,
        hyperparameters={
            "anchor": anchor_model,
            "metric": table.metric,
            "sigma": table.sigma,
            "temperature": temperature,
            "euclidean_flip": euclidean_flip,
        },
    )
    plan.validate()
    return plan


def _check_compatible(ckpts: list[Checkpoint]) -> list[str]:
    if not ckpts:
        raise InputError("no checkpoints to merge")
    names = list(ckpts[0].entries)
    for other in ckpts[1:]:
        if list(other.entries) != names:
            raise CompatibilityError(
                f"checkpoints disagree on tensor names "
                f"({other.metadata.get('model_id', '?')} vs {ckpts[0].metadata.get('model_id', '?')})"
            )
        for name in names:
            a, b = ckpts[0].entries[name], other.entries[name]
            if a.shape != b.shape:
                raise CompatibilityError(
                    f"tensor {name!r} has shape {b.shape}, expected {a.shape}"
                )
    return names


def _resolve_index(
    ckpt: Checkpoint, plan: MergePlan, index: LayerGroupIndex | None, cfg: ModelConfig | None
) -> LayerGroupIndex:
    if index is None:
        if cfg is None and "config_json" in ckpt.metadata:
            cfg = ModelConfig.from_json(ckpt.metadata["config_json"])
        if cfg is not None:
            index = build_layer_index(ckpt, cfg)
        elif plan.group_count == 1:
            index = LayerGroupIndex(groups=[list(ckpt.entries)])
        else:
            raise CompletenessError(
                "cannot derive layer grouping: pass an index or a model config"
            )
    if index.group_count != plan.group_count:
        raise CompletenessError(
            f"plan has {plan.group_count} groups but the index has {index.group_count}"
        )
    indexed = set(index.all_names())
    missing = [n for n in ckpt.entries if n not in indexed]
    if missing:
        raise CompletenessError(f"layer index does not cover tensors: {missing}")
    return index


def merge(
    ckpts: list[Checkpoint],
    plan: MergePlan,
    index: LayerGroupIndex | None = None,
    cfg: ModelConfig | None = None,
) -> Checkpoint:
    """Weighted per-group interpolation of shape-identical checkpoints.

    Accumulation is float64 in model order per element, then rounded to
    float32 — the documented deterministic summation order.
    """
    plan.validate()
    if len(ckpts) != len(plan.model_ids):
        raise CompatibilityError(
            f"plan covers {len(plan.model_ids)} models but {len(ckpts)} checkpoints were given"
        )
    names = _check_compatible(ckpts)
    index = _resolve_index(ckpts[0], plan, index, cfg)

    out: dict[str, np.ndarray] = {name: None for name in names}  # preserve name order
    for group_id, group_names in enumerate(index.groups):
        row = plan.weights[group_id]
        for name in group_names:
            acc = np.zeros(ckpts[0].entries[name].shape, dtype=np.float64)
            for weight, ckpt in zip(row, ckpts):
                acc += weight * ckpt.entries[name].astype(np.float64)
            out[name] = acc.astype(np.float32)

    metadata = {
        "model_id": "merged",
        "merge_method": plan.method,
        "plan_hash": plan.digest(),
    }
    if "config_json" in ckpts[0].metadata:
        metadata["config_json"] = ckpts[0].metadata["config_json"]
    return Checkpoint(entries=out, metadata=metadata)


def uniform_merge(
    ckpts: list[Checkpoint],
    index: LayerGroupIndex | None = None,
    cfg: ModelConfig | None = None,
) -> Checkpoint:
    """Parameter averaging: every group gets weight 1/N for each of N models."""
    _check_compatible(ckpts)
    if index is None and cfg is None and "config_json" not in ckpts[0].metadata:
        index = LayerGroupIndex(groups=[list(ckpts[0].entries)])
    groups = index.group_count if index is not None else None
    if groups is None:
        use_cfg = cfg or ModelConfig.from_json(ckpts[0].metadata["config_json"])
        groups = use_cfg.num_layers + 1
    ids = [c.metadata.get("model_id", f"model_{i}") for i, c in enumerate(ckpts)]
    weights = np.full((groups, len(ckpts)), 1.0 / len(ckpts), dtype=np.float64)
    plan = MergePlan(method="uniform", model_ids=ids, weights=weights)
    return merge(ckpts, plan, index=index, cfg=cfg)


def task_vector_merge(
    base: Checkpoint, experts: list[Checkpoint], lambdas: list[float]
) -> Checkpoint:
    """Base plus scaled expert deltas: theta* = theta_0 + sum_q lambda_q (theta_q - theta_0)."""
    if len(experts) != len(lambdas):
        raise InputError(f"{len(experts)} experts but {len(lambdas)} coefficients")
    if not experts:
        raise InputError("task vector merge needs at least one expert")
    names = _check_compatible([base, *experts])
    out: dict[str, np.ndarray] = {}
    for name in names:
        acc = base.entries[name].astype(np.float64).copy()
        base64 = base.entries[name].astype(np.float64)
        for lam, expert in zip(lambdas, experts):
            acc += lam * (expert.entries[name].astype(np.float64) - base64)
        out[name] = acc.astype(np.float32)
    metadata = {"model_id": "merged", "merge_method": "task_vector"}
    if "config_json" in base.metadata:
        metadata["config_json"] = base.metadata["config_json"]
    return Checkpoint(entries=out, metadata=metadata)


def _philox_for(seed: int, name: str) -> np.random.Generator:
    # counter-based stream keyed by (seed, tensor name): element i of the draw
    # is a pure function of the key, independent of chunking or threading
    digest = hashlib.sha256(f"{seed}\x00{name}".encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def dare_sparsify(
    base: Checkpoint, expert: Checkpoint, drop_rate: float, seed: int = 0
) -> Checkpoint:
    """Drop-and-rescale the expert delta: zero each element w.p. p, scale survivors by 1/(1-p).

    The expectation of the rescaled delta equals the original delta.  The
    randomness is a keyed counter-based stream, so results are reproducible
    and independent of execution order.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise InputError(f"drop_rate must be in [0, 1), got {drop_rate}")
    names = _check_compatible([base, expert])
    out: dict[str, np.ndarray] = {}
    for name in names:
        if drop_rate == 0.0:
            out[name] = expert.entries[name].copy()
            continue
        delta = expert.entries[name].astype(np.float64) - base.entries[name].astype(np.float64)
        uniforms = _philox_for(seed, name).random(delta.size).reshape(delta.shape)
        kept = np.where(uniforms >= drop_rate, delta / (1.0 - drop_rate), 0.0)
        out[name] = (base.entries[name].astype(np.float64) + kept).astype(np.float32)
    metadata = {"model_id": "merged", "merge_method": "dare", "dare_seed": str(seed)}
    if "config_json" in base.metadata:
        metadata["config_json"] = base.metadata["config_json"]
    return Checkpoint(entries=out, metadata=metadata)


def validation_loss(ckpt: Checkpoint, cfg: ModelConfig, samples: list) -> float:
    """Mean token-level cross-entropy over the output tokens of a validation set.

    ``samples`` holds objects with ``instruction`` and ``output`` text fields.
    The loss is micro-averaged: total negative log-likelihood over all scored
    tokens divided by the token count.
    """
    if not samples:
        raise InputError("validation set must be non-empty")
    total = 0.0
    count = 0
    for sample in samples:
        if not getattr(sample, "output", ""):
            raise InputError("validation sample has an empty output label")
        ids, out_start = encode_example(sample.instruction, sample.output, cfg)
        if len(ids) < 2 or out_start >= len(ids):
            continue
        logits, _ = forward(ckpt, cfg, ids)
        logp = logits.astype(np.float64)
        logp -= logp.max(axis=1, keepdims=True)
        logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
        for t in range(max(out_start, 1), len(ids)):
            total -= logp[t - 1, ids[t]]
            count += 1
    if count == 0:
        raise InputError("validation set produced no scorable output tokens")
    return total / count


def loss_weighted_plan(
    ckpts: list[Checkpoint],
    cfg: ModelConfig,
    samples: list,
    groups: int,
) -> MergePlan:
    """One global softmax(-loss) weight vector broadcast to every group."""
    losses = np.asarray([validation_loss(c, cfg, samples) for c in ckpts], dtype=np.float64)
    global_weights = softmax64(-losses)
    ids = [c.metadata.get("model_id", f"model_{i}") for i, c in enumerate(ckpts)]
    plan = MergePlan(
        method="loss_weighted",
        model_ids=ids,
        weights=np.tile(global_weights, (groups, 1)),
        hyperparameters={"validation_losses": losses.tolist()},
    )
    plan.validate()
    return plan


def loss_weighted_merge(
    ckpts: list[Checkpoint],
    cfg: ModelConfig,
    samples: list,
    index: LayerGroupIndex | None = None,
) -> Checkpoint:
    """Merge under validation-loss softmax weights (lower loss, larger weight)."""
    if index is None:
        index = build_layer_index(ckpts[0], cfg)
    plan = loss_weighted_plan(ckpts, cfg, samples, groups=index.group_count)
    return merge(ckpts, plan, index=index, cfg=cfg)
