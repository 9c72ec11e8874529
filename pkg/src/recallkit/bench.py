"""Desk-scale continual-learning bench: synthetic tasks, expert checkpoints,
sequential merging, observation curves, and accuracy/retention reports.

Three byte-level tasks with disjoint instruction prefixes and disjoint input
alphabets are generated deterministically from a seed.  Every task's answer is
a single character determined by the last payload byte, so a task is solvable
exactly by a bigram-style checkpoint (constructed by :func:`gen_solver_expert`)
and is easily learnable by a trained toy transformer.  Random depth-growing
perturbation experts (:func:`gen_synthetic_expert`) exercise the observation
pipeline where task skill is not needed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, build_layer_index, group_of
from .clustering import select_typical
from .errors import InputError
from .extraction import RepresentationSet, extract, require_aligned
from .merging import merge, recall_weights, uniform_merge
from .model import (
    EOS_ID,
    ModelConfig,
    encode_prompt,
    greedy_decode,
    init_checkpoint,
    param_shapes,
)
from .similarity import build_table
from .util import parallel_map

__all__ = [
    "TaskSample",
    "TaskDataset",
    "BenchReport",
    "ObservationCurves",
    "TASK_RULES",
    "apply_rule",
    "gen_tasks",
    "gen_solver_expert",
    "gen_synthetic_expert",
    "evaluate",
    "run_sequential",
    "observation_curves",
    "save_jsonl",
    "load_jsonl",
    "save_task",
    "write_report_csv",
    "write_observation_csv",
    "write_raw_vectors_csv",
]

# Input alphabets are pairwise disjoint and never appear as answers; answers
# are uppercase so a generated answer byte can be mapped to EOS without
# clashing with any rule input.
_VOWEL_NEXT = {"a": "E", "e": "I", "i": "O", "o": "U", "u": "A"}
_DIGIT_MIRROR = {d: "ZYXWVUTSRQ"[i] for i, d in enumerate("0123456789")}
_CONSONANT_UPPER = {c: c.upper() for c in "kmnpq"}

TASK_RULES: dict[str, tuple[str, dict[str, str]]] = {
    "vowel-cycle": ("vowel: ", _VOWEL_NEXT),
    "digit-mirror": ("digit: ", _DIGIT_MIRROR),
    "consonant-upper": ("upper: ", _CONSONANT_UPPER),
}

_FILLER = "bcdfghjlrstvw"  # never a rule input, never an answer

DEFAULT_SPLIT_SIZES = {"train": 512, "val": 64, "test": 128}


@dataclass
class TaskSample:
    instruction: str
    output: str


@dataclass
class TaskDataset:
    name: str
    train: list[TaskSample]
    val: list[TaskSample]
    test: list[TaskSample]

    def split(self, name: str) -> list[TaskSample]:
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown split {name!r}")
        return getattr(self, name)


def apply_rule(task_name: str, instruction: str) -> str:
    """Recompute the reference answer from an instruction by the task rule."""
    prefix, mapping = TASK_RULES[task_name]
    if not instruction.startswith(prefix):
        raise InputError(f"instruction does not carry the {task_name!r} prefix")
    return mapping[instruction[-1]]


def _name_digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def gen_tasks(seed: int, sizes: dict[str, int] | None = None) -> list[TaskDataset]:
    """Three deterministic byte-level tasks with disjoint prefixes and skills."""
    sizes = dict(DEFAULT_SPLIT_SIZES if sizes is None else sizes)
    tasks = []
    for name, (prefix, mapping) in TASK_RULES.items():
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_name_digest(name),)))
        alphabet = list(mapping)

        def sample() -> TaskSample:
            length = int(rng.integers(3, 9))
            payload = "".join(_FILLER[i] for i in rng.integers(0, len(_FILLER), size=length))
            last = alphabet[int(rng.integers(len(alphabet)))]
            return TaskSample(instruction=prefix + payload + last, output=mapping[last])

        splits = {k: [sample() for _ in range(n)] for k, n in sizes.items()}
        tasks.append(TaskDataset(name=name, **splits))
    return tasks


def _char_dims(cfg: ModelConfig) -> dict[str, int]:
    chars = set()
    for _, mapping in TASK_RULES.values():
        chars.update(mapping)
        chars.update(mapping.values())
    ordered = sorted(chars)
    if len(ordered) > cfg.embed_dim:
        raise InputError(
            f"embed_dim {cfg.embed_dim} too small for {len(ordered)} task characters"
        )
    return {c: i for i, c in enumerate(ordered)}

_SOLVER_EMBED = 1.0
_SOLVER_LOGIT = 8.0


def gen_solver_expert(cfg: ModelConfig, task_name: str, model_id: str | None = None) -> Checkpoint:
    """Construct a checkpoint that answers one task exactly.

    All blocks are zero, so the residual stream is the raw embedding; the
    embedding and lm head encode last-byte -> answer -> EOS transitions on
    dimensions reserved per character.  Because each task owns disjoint input
    bytes, merged solvers keep every task's mapping intact up to scaling,
    which argmax decoding ignores.
    """
    if task_name not in TASK_RULES:
        raise InputError(f"unknown task {task_name!r}")
    dims = _char_dims(cfg)
    entries = {name: np.zeros(shape, dtype=np.float32) for name, shape in param_shapes(cfg).items()}
    entries["final_norm"][:] = 1.0
    embed, lm_head = entries["embed.tok"], entries["lm_head"]
    _, mapping = TASK_RULES[task_name]
    for src, answer in mapping.items():
        embed[ord(src), dims[src]] = _SOLVER_EMBED
        lm_head[dims[src], ord(answer)] = _SOLVER_LOGIT
    for answer in set(mapping.values()):
        embed[ord(answer), dims[answer]] = _SOLVER_EMBED
        lm_head[dims[answer], EOS_ID] = _SOLVER_LOGIT
    return Checkpoint(
        entries=entries,
        metadata={"model_id": model_id or f"solver_{task_name}", "config_json": cfg.to_json()},
    )


def gen_synthetic_expert(
    base: Checkpoint,
    task: str,
    strength: float,
    seed: int = 0,
    model_id: str | None = None,
) -> Checkpoint:
    """Base plus seeded low-rank perturbations growing in magnitude with depth.

    Each tensor in group g receives a rank-1 (vectors: rank-0) perturbation of
    Frobenius norm strength * (g+1) / G, so the per-group divergence from the
    base is non-decreasing in depth.  strength=0 reproduces the base exactly.
    """
    if strength < 0:
        raise InputError(f"strength must be >= 0, got {strength}")
    cfg = ModelConfig.from_json(base.metadata["config_json"])
    task_key = _name_digest(task)
    groups = cfg.num_layers + 1
    entries: dict[str, np.ndarray] = {}
    for name, tensor in base.entries.items():
        if strength == 0.0:
            entries[name] = tensor.copy()
            continue
        g = group_of(name, cfg.num_layers)
        amp = strength * (g + 1) / groups
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(task_key, _name_digest(name)))
        )
        if tensor.ndim >= 2:
            u = rng.normal(size=tensor.shape[0])
            v = rng.normal(size=int(np.prod(tensor.shape[1:])))
            delta = np.outer(u, v).reshape(tensor.shape)
        else:
            delta = rng.normal(size=tensor.shape)
        norm = np.linalg.norm(delta)
        if norm > 0:
            delta = delta * (amp / norm)
        entries[name] = (tensor.astype(np.float64) + delta).astype(np.float32)
    return Checkpoint(
        entries=entries,
        metadata={
            "model_id": model_id or f"expert_{task}",
            "config_json": base.metadata["config_json"],
        },
    )


def evaluate(
    ckpt: Checkpoint,
    cfg: ModelConfig,
    samples: list[TaskSample],
    max_new_tokens: int = 16,
    threads: int = 1,
) -> float:
    """Exact-match accuracy of greedy answer continuations."""
    if not samples:
        raise InputError("test split must be non-empty")

    def one(sample: TaskSample) -> bool:
        prompt = encode_prompt(sample.instruction, cfg)
        generated = greedy_decode(ckpt, cfg, prompt, max_new_tokens=max_new_tokens)
        if any(t > 255 for t in generated):
            return False
        return bytes(generated) == sample.output.encode("utf-8")

    matches = parallel_map(one, samples, threads=threads)
    return sum(matches) / len(samples)


@dataclass
class BenchReport:
    """Sequential-scenario outcome: per-step accuracies and the retention curve."""

    method: str
    seed: int
    task_names: list[str]
    steps: list[dict] = field(default_factory=list)
    retention: list[float] = field(default_factory=list)

    def mean_final_accuracy(self) -> float:
        return float(np.mean(list(self.steps[-1]["accuracies"].values())))

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "seed": self.seed,
                "task_names": self.task_names,
                "steps": self.steps,
                "retention": self.retention,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        data = json.loads(text)
        return cls(
            method=data["method"],
            seed=int(data["seed"]),
            task_names=list(data["task_names"]),
            steps=list(data["steps"]),
            retention=[float(v) for v in data["retention"]],
        )


def _recall_step(
    accumulated: Checkpoint,
    expert: Checkpoint,
    base: Checkpoint | None,
    task: TaskDataset,
    cfg: ModelConfig,
    index,
    seed: int,
    metric: str,
    sigma: float,
    m_per_layer: int,
    layer_policy,
    temperature: float,
    threads: int,
) -> Checkpoint:
    # Algorithm: cluster the new task's representations under the new expert,
    # re-extract the typical samples under every participant, softmax the
    # anchor's per-layer similarities into merge weights.
    texts = [s.instruction for s in task.train]
    anchor_reps = extract(expert, cfg, texts, model_id="anchor", threads=threads)
    typical = select_typical(
        anchor_reps, m_per_layer=min(m_per_layer, len(texts)), layers=layer_policy, seed=seed
    )
    typ_texts = [texts[int(sid)] for sid in typical.sample_ids]

    participants = [("accumulated", accumulated), ("anchor", expert)]
    if base is not None:
        participants.append(("base", base))
    reps = {
        mid: extract(ck, cfg, typ_texts, model_id=mid, threads=threads)
        for mid, ck in participants
    }
    table = build_table(reps, metric=metric, sigma=sigma)
    plan = recall_weights(table, anchor_model="anchor", temperature=temperature)
    return merge([ck for _, ck in participants], plan, index=index)


def run_sequential(
    tasks: list[TaskDataset],
    method: str,
    cfg: ModelConfig,
    seed: int = 0,
    expert_source: str = "solver",
    experts: list[Checkpoint] | None = None,
    base: Checkpoint | None = None,
    include_base: bool = False,
    strength: float = 0.5,
    metric: str = "rbf",
    sigma: float = 1.0,
    m_per_layer: int = 20,
    layer_policy="all",
    temperature: float = 1.0,
    max_new_tokens: int = 16,
    threads: int = 1,
) -> BenchReport:
    """Merge task experts in sequence and track accuracy on all seen tasks.

    ``method`` is one of ``recall``, ``uniform``, or ``overwrite`` (no merging;
    the newest expert replaces the accumulated model).  The accumulated model
    starts as the first task's expert.
    """
    if not tasks:
        raise InputError("run_sequential needs at least one task")
    if method not in ("recall", "uniform", "overwrite"):
        raise InputError(f"unknown sequential method {method!r}")
    if experts is not None and len(experts) != len(tasks):
        raise InputError(f"{len(experts)} experts for {len(tasks)} tasks")

    if experts is None:
        if expert_source == "solver":
            experts = [gen_solver_expert(cfg, t.name) for t in tasks]
        elif expert_source == "synthetic":
            if base is None:
                base = init_checkpoint(cfg, seed)
            experts = [gen_synthetic_expert(base, t.name, strength, seed) for t in tasks]
        else:
            raise InputError(f"unknown expert source {expert_source!r}")
    if include_base and base is None:
        raise InputError("include_base requires a base checkpoint")

    index = build_layer_index(experts[0], cfg)
    report = BenchReport(method=method, seed=seed, task_names=[t.name for t in tasks])

    accumulated = experts[0]
    for step, task in enumerate(tasks):
        if step > 0:
            expert = experts[step]
            if method == "overwrite":
                accumulated = expert
            elif method == "uniform":
                participants = [accumulated, expert] + ([base] if include_base else [])
                accumulated = uniform_merge(participants, index=index)
            else:
                accumulated = _recall_step(
                    accumulated,
                    expert,
                    base if include_base else None,
                    task,
                    cfg,
                    index,
                    seed,
                    metric,
                    sigma,
                    m_per_layer,
                    layer_policy,
                    temperature,
                    threads,
                )
        accuracies = {
            tasks[i].name: evaluate(
                accumulated, cfg, tasks[i].test, max_new_tokens=max_new_tokens, threads=threads
            )
            for i in range(step + 1)
        }
        report.steps.append(
            {"step": step, "trained_task": task.name, "accuracies": accuracies}
        )
        report.retention.append(accuracies[tasks[0].name])
    return report


@dataclass
class ObservationCurves:
    """Adjacent-layer (intra-model) and per-layer inter-model similarity rows."""

    metric: str
    intra: list[dict] = field(default_factory=list)
    inter: list[dict] = field(default_factory=list)


def _mean_cosine(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    # returns (mean over defined sample pairs, count defined); NaN when none
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    ok = (nx > 0) & (ny > 0)
    if not np.any(ok):
        return float("nan"), 0
    cos = np.sum(x[ok] * y[ok], axis=1) / (nx[ok] * ny[ok])
    return float(np.mean(cos)), int(ok.sum())


def observation_curves(
    reps_by_model: dict[str, RepresentationSet],
    metric: str = "cosine",
    sigma: float = 1.0,
) -> ObservationCurves:
    """Similarity curves behind the layer-shift and model-divergence findings.

    Intra rows compare each model's adjacent layer boundaries; inter rows
    compare the same layer across each model pair.  Undefined cosines (zero
    vectors) are emitted as NaN-sentinel rows with ``valid`` false.
    """
    if metric not in ("cosine", "rbf"):
        raise InputError(f"observation metric must be cosine or rbf, got {metric!r}")
    ids = list(reps_by_model)
    first = reps_by_model[ids[0]]
    for mid in ids[1:]:
        require_aligned(first, reps_by_model[mid])

    curves = ObservationCurves(metric=metric)
    for mid in ids:
        reps = reps_by_model[mid]
        for layer in range(reps.num_layers - 1):
            x = reps.layers[layer].astype(np.float64)
            y = reps.layers[layer + 1].astype(np.float64)
            if metric == "cosine":
                value, n = _mean_cosine(x, y)
            else:
                d2 = np.sum((x - y) ** 2, axis=1)
                value, n = float(np.mean(np.exp(-d2 / (2 * sigma * sigma)))), x.shape[0]
            curves.intra.append(
                {
                    "model": mid,
                    "layer_from": layer,
                    "layer_to": layer + 1,
                    "value": value,
                    "valid": n > 0,
                    "n": n,
                }
            )
    for i, p in enumerate(ids):
        for q in ids[i + 1 :]:
            for layer in range(first.num_layers):
                x = reps_by_model[p].layers[layer].astype(np.float64)
                y = reps_by_model[q].layers[layer].astype(np.float64)
                if metric == "cosine":
                    value, n = _mean_cosine(x, y)
                else:
                    d2 = np.sum((x - y) ** 2, axis=1)
                    value, n = float(np.mean(np.exp(-d2 / (2 * sigma * sigma)))), x.shape[0]
                curves.inter.append(
                    {
                        "model_p": p,
                        "model_q": q,
                        "layer": layer,
                        "value": value,
                        "valid": n > 0,
                        "n": n,
                    }
                )
    return curves


def save_jsonl(samples: list[TaskSample], path) -> None:
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps({"instruction": sample.instruction, "output": sample.output}))
            fh.write("\n")


def load_jsonl(path) -> list[TaskSample]:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "instruction" not in obj or not str(obj.get("output", "")):
                raise InputError(f"{path}:{lineno}: needs non-empty instruction and output")
            samples.append(TaskSample(instruction=str(obj["instruction"]), output=str(obj["output"])))
    if not samples:
        raise InputError(f"{path}: no samples")
    return samples


def save_task(task: TaskDataset, directory) -> dict[str, str]:
    """Write {name}.{split}.jsonl files; returns split -> path."""
    import os

    paths = {}
    for split in ("train", "val", "test"):
        path = os.path.join(str(directory), f"{task.name}.{split}.jsonl")
        save_jsonl(task.split(split), path)
        paths[split] = path
    return paths


def write_report_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "trained_task", "task", "accuracy"])
        for step in report.steps:
            for task, acc in step["accuracies"].items():
                writer.writerow([step["step"], step["trained_task"], task, repr(acc)])


def write_observation_csv(curves: ObservationCurves, intra_path, inter_path) -> None:
    with open(intra_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "layer_from", "layer_to", "metric", "value", "valid", "n"])
        for row in curves.intra:
            writer.writerow(
                [row["model"], row["layer_from"], row["layer_to"], curves.metric,
                 repr(row["value"]), int(row["valid"]), row["n"]]
            )
    with open(inter_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_p", "model_q", "layer", "metric", "value", "valid", "n"])
        for row in curves.inter:
            writer.writerow(
                [row["model_p"], row["model_q"], row["layer"], curves.metric,
                 repr(row["value"]), int(row["valid"]), row["n"]]
            )


def write_raw_vectors_csv(reps: RepresentationSet, path) -> None:
    """Wide export of pooled vectors for external projection tooling."""
    dim = reps.layers[0].shape[1] if reps.layers else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "layer"] + [f"v{i}" for i in range(dim)])
        for layer, matrix in enumerate(reps.layers):
            for sid, row in zip(reps.sample_ids, matrix):
                writer.writerow([sid, layer] + [repr(float(v)) for v in row])
