"""Train a toy-transformer expert on a bench task and export it in `.st` form.

Cross-entropy next-token training on instruction+output sequences with the
loss masked to output tokens (answer bytes and the closing EOS).  The exported
checkpoint carries the canonical model-config JSON, so the toolkit loads it
like any of its own checkpoints.  Determinism is best-effort (single process,
seeded torch/numpy); bit-exactness across platforms is not promised.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .data import batches, load_jsonl
from .model import TinyDecoder, TrainerModelConfig
from .stio import load_tensors, save_tensors


@dataclass
class TrainSpec:
    dataset: str
    output: str
    base_checkpoint: str | None = None
    model_config: dict = field(default_factory=dict)
    lr: float = 3e-3
    steps: int = 600
    batch: int = 32
    seed: int = 0
    model_id: str = "trained_expert"

    @classmethod
    def from_file(cls, path) -> "TrainSpec":
        with open(path) as fh:
            raw = json.load(fh)
        optimizer = raw.pop("optimizer", {})
        spec = cls(
            dataset=raw["dataset"],
            output=raw["output"],
            base_checkpoint=raw.get("base_checkpoint"),
            model_config=raw.get("model_config", {}),
            seed=int(raw.get("seed", 0)),
            model_id=str(raw.get("model_id", "trained_expert")),
        )
        spec.lr = float(optimizer.get("lr", spec.lr))
        spec.steps = int(optimizer.get("steps", spec.steps))
        spec.batch = int(optimizer.get("batch", spec.batch))
        return spec


def _resolve_config(spec: TrainSpec, base_metadata: dict[str, str]) -> TrainerModelConfig:
    cfg = TrainerModelConfig(**spec.model_config) if spec.model_config else None
    if "config_json" in base_metadata:
        base_cfg = TrainerModelConfig.from_json(base_metadata["config_json"])
        if cfg is not None and cfg.to_json() != base_cfg.to_json():
            raise ValueError(
                "model config disagrees with the base checkpoint's config_json; export refused"
            )
        cfg = base_cfg
    if cfg is None:
        cfg = TrainerModelConfig()
    return cfg


def train_expert(spec: TrainSpec) -> str:
    """Run the training loop and write the checkpoint plus train_log.csv."""
    torch.manual_seed(spec.seed)
    samples = load_jsonl(spec.dataset)

    base_entries, base_metadata = ({}, {})
    if spec.base_checkpoint:
        base_entries, base_metadata = load_tensors(spec.base_checkpoint)
    cfg = _resolve_config(spec, base_metadata)

    model = TinyDecoder(cfg)
    if base_entries:
        model.load_entries(base_entries)

    log_rows: list[tuple[int, float]] = []
    if spec.steps > 0:
        optimizer = torch.optim.Adam(model.parameters(), lr=spec.lr)
        model.train()
        for step, (tokens, mask) in enumerate(
            batches(samples, cfg, spec.batch, spec.steps, spec.seed), start=1
        ):
            logits = model(tokens)
            targets = tokens[:, 1:]
            scored = mask[:, :-1]
            loss = F.cross_entropy(
                logits[:, :-1][scored], targets[scored], reduction="mean"
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            log_rows.append((step, float(loss.detach())))

    metadata = {"model_id": spec.model_id, "config_json": cfg.to_json()}
    save_tensors(model.export_entries(), metadata, spec.output)

    log_path = os.path.splitext(spec.output)[0] + ".train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(log_rows)
    return spec.output


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="recall-train", description="Train a bench-task expert")
    subs = parser.add_subparsers(dest="command", required=True)
    p = subs.add_parser("train", help="train per a JSON spec and export a checkpoint")
    p.add_argument("--spec", required=True, help="TrainSpec JSON file")
    args = parser.parse_args(argv)
    try:
        spec = TrainSpec.from_file(args.spec)
        out = train_expert(spec)
    except (ValueError, OSError, KeyError) as exc:
        print(f"recall-train: {exc}", file=sys.stderr)
        return 2
    print(f"[train] wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
