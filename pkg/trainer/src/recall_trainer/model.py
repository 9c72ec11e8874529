"""Torch twin of the toy decoder: pre-norm blocks, rotary q/k, gated-SiLU MLP.

Parameter matrices are stored in (in_features, out_features) orientation and
applied as ``x @ W`` so exported tensors match the shared naming grammar and
shapes exactly, with no transposes at the file boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258


@dataclass(frozen=True)
class TrainerModelConfig:
    """Mirror of the toolkit's model configuration; identical JSON schema."""

    vocab_size: int = 259
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_hidden: int = 128
    max_seq_len: int = 128
    rope_base: float = 10000.0
    norm_eps: float = 1e-6

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TrainerModelConfig":
        return cls(**json.loads(text))


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ms = x.pow(2).mean(dim=-1, keepdim=True)
        return x / torch.sqrt(ms + self.eps) * self.weight


def _rope_tables(length: int, head_dim: int, base: float, device) -> tuple[torch.Tensor, torch.Tensor]:
    inv_freq = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float32, device=device) / head_dim)
    angles = torch.outer(torch.arange(length, dtype=torch.float32, device=device), inv_freq)
    return angles.cos(), angles.sin()


def _rope_apply(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, L, H, D); tables: (L, D/2)
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    c = cos[None, :, None, :]
    s = sin[None, :, None, :]
    return torch.cat((x1 * c - x2 * s, x1 * s + x2 * c), dim=-1)


class Block(nn.Module):
    def __init__(self, cfg: TrainerModelConfig):
        super().__init__()
        e, h = cfg.embed_dim, cfg.mlp_hidden
        self.cfg = cfg
        self.norm_attn = RMSNorm(e, cfg.norm_eps)
        self.wq = nn.Parameter(torch.empty(e, e))
        self.wk = nn.Parameter(torch.empty(e, e))
        self.wv = nn.Parameter(torch.empty(e, e))
        self.wo = nn.Parameter(torch.empty(e, e))
        self.norm_mlp = RMSNorm(e, cfg.norm_eps)
        self.w_gate = nn.Parameter(torch.empty(e, h))
        self.w_up = nn.Parameter(torch.empty(e, h))
        self.w_down = nn.Parameter(torch.empty(h, e))

    def forward(self, x: torch.Tensor, cos, sin, causal: torch.Tensor) -> torch.Tensor:
        bsz, length, e = x.shape
        heads, dim = self.cfg.num_heads, self.cfg.head_dim
        xn = self.norm_attn(x)
        q = (xn @ self.wq).view(bsz, length, heads, dim)
        k = (xn @ self.wk).view(bsz, length, heads, dim)
        v = (xn @ self.wv).view(bsz, length, heads, dim)
        q = _rope_apply(q, cos, sin).transpose(1, 2)  # (B, H, L, D)
        k = _rope_apply(k, cos, sin).transpose(1, 2)
        v = v.transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dim)
        scores = scores.masked_fill(~causal, float("-inf"))
        attn = torch.softmax(scores, dim=-1) @ v  # (B, H, L, D)
        attn = attn.transpose(1, 2).reshape(bsz, length, e)
        x = x + attn @ self.wo
        xn = self.norm_mlp(x)
        x = x + (F.silu(xn @ self.w_gate) * (xn @ self.w_up)) @ self.w_down
        return x


class TinyDecoder(nn.Module):
    def __init__(self, cfg: TrainerModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Parameter(torch.empty(cfg.vocab_size, cfg.embed_dim))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
        self.final_norm = RMSNorm(cfg.embed_dim, cfg.norm_eps)
        self.lm_head = nn.Parameter(torch.empty(cfg.embed_dim, cfg.vocab_size))
        self.reset_parameters()

    def reset_parameters(self, scale: float = 0.02) -> None:
        for name, param in self.named_parameters():
            if "norm" in name:
                nn.init.ones_(param)
            else:
                nn.init.normal_(param, std=scale)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() == 1:
            tokens = tokens[None]
        length = tokens.shape[1]
        x = self.embed[tokens]
        cos, sin = _rope_tables(length, self.cfg.head_dim, self.cfg.rope_base, tokens.device)
        causal = torch.tril(torch.ones(length, length, dtype=torch.bool, device=tokens.device))
        for block in self.blocks:
            x = block(x, cos, sin, causal)
        return self.final_norm(x) @ self.lm_head

    # ------------------------------------------------- shared-format bridge

    def export_entries(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "embed.tok": self.embed.detach().cpu().numpy().astype(np.float32)
        }
        for i, block in enumerate(self.blocks):
            p = f"layers.{i}"
            out[f"{p}.norm_attn"] = block.norm_attn.weight.detach().cpu().numpy()
            out[f"{p}.attn.wq"] = block.wq.detach().cpu().numpy()
            out[f"{p}.attn.wk"] = block.wk.detach().cpu().numpy()
            out[f"{p}.attn.wv"] = block.wv.detach().cpu().numpy()
            out[f"{p}.attn.wo"] = block.wo.detach().cpu().numpy()
            out[f"{p}.norm_mlp"] = block.norm_mlp.weight.detach().cpu().numpy()
            out[f"{p}.mlp.w_gate"] = block.w_gate.detach().cpu().numpy()
            out[f"{p}.mlp.w_up"] = block.w_up.detach().cpu().numpy()
            out[f"{p}.mlp.w_down"] = block.w_down.detach().cpu().numpy()
        out["final_norm"] = self.final_norm.weight.detach().cpu().numpy()
        out["lm_head"] = self.lm_head.detach().cpu().numpy()
        return {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in out.items()}

    def load_entries(self, entries: dict[str, np.ndarray]) -> None:
        def put(param: nn.Parameter, name: str) -> None:
            # copy: frombuffer-backed arrays are read-only
            tensor = torch.from_numpy(np.array(entries[name], dtype=np.float32))
            if tuple(param.shape) != tuple(tensor.shape):
                raise ValueError(f"tensor {name!r}: shape {tuple(tensor.shape)} != {tuple(param.shape)}")
            with torch.no_grad():
                param.copy_(tensor)

        put(self.embed, "embed.tok")
        for i, block in enumerate(self.blocks):
            p = f"layers.{i}"
            put(block.norm_attn.weight, f"{p}.norm_attn")
            put(block.wq, f"{p}.attn.wq")
            put(block.wk, f"{p}.attn.wk")
            put(block.wv, f"{p}.attn.wv")
            put(block.wo, f"{p}.attn.wo")
            put(block.norm_mlp.weight, f"{p}.norm_mlp")
            put(block.w_gate, f"{p}.mlp.w_gate")
            put(block.w_up, f"{p}.mlp.w_up")
            put(block.w_down, f"{p}.mlp.w_down")
        put(self.final_norm.weight, "final_norm")
        put(self.lm_head, "lm_head")
