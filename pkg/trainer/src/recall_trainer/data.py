"""Bench-format dataset loading and byte-level batching with output-token masks."""

from __future__ import annotations

import json

import numpy as np
import torch

from .model import BOS_ID, EOS_ID, PAD_ID, TrainerModelConfig


def load_jsonl(path) -> list[dict]:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "instruction" not in obj or not obj.get("output"):
                raise ValueError(f"{path}:{lineno}: needs instruction and non-empty output")
            samples.append({"instruction": str(obj["instruction"]), "output": str(obj["output"])})
    if not samples:
        raise ValueError(f"{path}: no samples")
    return samples


def encode(sample: dict, cfg: TrainerModelConfig) -> tuple[list[int], int]:
    """BOS + instruction bytes + output bytes + EOS, with the output start index."""
    prompt = [BOS_ID] + list(sample["instruction"].encode("utf-8"))
    prompt = prompt[: cfg.max_seq_len]
    ids = prompt + list(sample["output"].encode("utf-8")) + [EOS_ID]
    return ids[: cfg.max_seq_len], min(len(prompt), cfg.max_seq_len)


def make_batch(samples: list[dict], cfg: TrainerModelConfig):
    """Right-padded token batch plus a loss mask over output-token targets.

    ``mask[b, t]`` marks positions whose *next* token (the training target) is
    an output byte or the closing EOS.
    """
    encoded = [encode(s, cfg) for s in samples]
    width = max(len(ids) for ids, _ in encoded)
    tokens = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.bool)
    for row, (ids, out_start) in enumerate(encoded):
        tokens[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        for t in range(max(out_start, 1), len(ids)):
            mask[row, t - 1] = True
    return tokens, mask


def batches(samples: list[dict], cfg: TrainerModelConfig, batch_size: int, steps: int, seed: int):
    """Seeded shuffled mini-batches, cycling through the dataset for ``steps``."""
    rng = np.random.default_rng(seed)
    order: list[int] = []
    for _ in range(steps):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(samples)).tolist())
        picked, order = order[:batch_size], order[batch_size:]
        yield make_batch([samples[i] for i in picked], cfg)
