"""Trainer contract acceptance: the exported expert must interoperate with the
installed toolkit purely through the shared file formats."""

import time

import numpy as np
import pytest
import torch

import recallkit as rk
from recallkit import bench
from recallkit import checkpoint as ckpt_store

from recall_trainer.model import TinyDecoder, TrainerModelConfig
from recall_trainer.train import TrainSpec, train_expert


def test_trainer_contract(tmp_path):
    start = time.perf_counter()

    cfg = rk.ModelConfig()
    tasks = bench.gen_tasks(seed=1)
    task = tasks[0]

    base = rk.init_checkpoint(cfg, seed=1, model_id="base")
    base_path = tmp_path / "base.st"
    ckpt_store.save(base, base_path)
    train_path = tmp_path / "train.jsonl"
    bench.save_jsonl(task.train, train_path)

    expert_path = tmp_path / "expert.st"
    train_expert(
        TrainSpec(
            dataset=str(train_path),
            output=str(expert_path),
            base_checkpoint=str(base_path),
            steps=400,
            batch=32,
            lr=3e-3,
            seed=0,
            model_id="trained_expert",
        )
    )

    # 1. exported checkpoint loads in the primary, same names/shapes as base
    expert = ckpt_store.load(expert_path)
    assert list(expert.entries) == list(base.entries)
    for name in base.entries:
        assert expert.entries[name].shape == base.entries[name].shape
    assert expert.metadata["config_json"] == cfg.to_json()

    # 2. forward logits agree within 1e-3 absolute on a fixed prompt
    prompt = rk.tokenize(task.test[0].instruction, cfg)
    primary_logits, _ = rk.forward(expert, cfg, prompt)
    twin = TinyDecoder(TrainerModelConfig.from_json(expert.metadata["config_json"]))
    twin.load_entries(expert.entries)
    twin.eval()
    with torch.no_grad():
        trainer_logits = twin(torch.tensor(prompt))[0].numpy()
    max_diff = float(np.abs(primary_logits - trainer_logits).max())
    assert max_diff <= 1e-3, f"logit disagreement {max_diff:.2e}"

    # 3. trained expert beats base on its own task under the primary evaluator
    base_acc = bench.evaluate(base, cfg, task.test)
    expert_acc = bench.evaluate(expert, cfg, task.test)
    assert expert_acc > base_acc, f"trained {expert_acc:.3f} vs base {base_acc:.3f}"

    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    print(
        f"\nACCEPTANCE trainer-contract: PASS ({elapsed:.1f}s < 600s; "
        f"logit diff {max_diff:.2e}, accuracy {base_acc:.3f} -> {expert_acc:.3f})"
    )
