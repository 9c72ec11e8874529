import numpy as np
import pytest

from recallkit.checkpoint import Checkpoint
from recallkit.model import ModelConfig, param_shapes


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(embed_dim=8, num_layers=2, num_heads=2, mlp_hidden=12, max_seq_len=32)


@pytest.fixture
def make_ckpt(tiny_cfg):
    """Factory for seeded random checkpoints matching the tiny config."""

    def build(seed: int, model_id: str = "m", cfg: ModelConfig | None = None) -> Checkpoint:
        cfg = cfg or tiny_cfg
        rng = np.random.default_rng(seed)
        entries = {
            name: rng.normal(0, 0.1, size=shape).astype(np.float32)
            for name, shape in param_shapes(cfg).items()
        }
        return Checkpoint(entries=entries, metadata={"model_id": model_id, "config_json": cfg.to_json()})

    return build
