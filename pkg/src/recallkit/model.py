"""Deterministic forward pass of a small decoder-only transformer.

Architecture: pre-norm residual blocks, rotary position encoding on q/k,
causal attention, gated-SiLU MLP, RMS norms without bias, untied lm head.
The byte-level tokenizer maps UTF-8 bytes to ids 0..255 with PAD/BOS/EOS
appended as ids 256/257/258.

``forward`` returns the logits together with the hidden states tapped at every
layer boundary: index 0 is the embedding output, index i the residual stream
after block i, all taken before the final norm.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import Checkpoint
from .errors import DimensionError, InputError
from .tensor import matmul, rms_norm

__all__ = [
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "ModelConfig",
    "param_shapes",
    "zero_checkpoint",
    "init_checkpoint",
    "tokenize",
    "encode_prompt",
    "encode_example",
    "forward",
    "greedy_decode",
]

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258


@dataclass(frozen=True)
class ModelConfig:
    """Shape and numeric constants of the toy transformer."""

    vocab_size: int = 259
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_hidden: int = 128
    max_seq_len: int = 128
    rope_base: float = 10000.0
    norm_eps: float = 1e-6

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads", "mlp_hidden", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"ModelConfig.{name} must be >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise InputError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if (self.embed_dim // self.num_heads) % 2 != 0:
            raise InputError("head dimension must be even for rotary position encoding")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_json(self) -> str:
        """Canonical JSON form, stable byte-for-byte across writers."""
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape for every parameter, in canonical name order."""
    e, h = cfg.embed_dim, cfg.mlp_hidden
    shapes: dict[str, tuple[int, ...]] = {"embed.tok": (cfg.vocab_size, e)}
    for i in range(cfg.num_layers):
        shapes[f"layers.{i}.norm_attn"] = (e,)
        shapes[f"layers.{i}.attn.wq"] = (e, e)
        shapes[f"layers.{i}.attn.wk"] = (e, e)
        shapes[f"layers.{i}.attn.wv"] = (e, e)
        shapes[f"layers.{i}.attn.wo"] = (e, e)
        shapes[f"layers.{i}.norm_mlp"] = (e,)
        shapes[f"layers.{i}.mlp.w_gate"] = (e, h)
        shapes[f"layers.{i}.mlp.w_up"] = (e, h)
        shapes[f"layers.{i}.mlp.w_down"] = (h, e)
    shapes["final_norm"] = (e,)
    shapes["lm_head"] = (e, cfg.vocab_size)
    return shapes


def zero_checkpoint(cfg: ModelConfig, model_id: str = "zero") -> Checkpoint:
    """All-zero parameters (annihilator fixture; forward maps everything to 0)."""
    entries = {name: np.zeros(shape, dtype=np.float32) for name, shape in param_shapes(cfg).items()}
    return Checkpoint(entries=entries, metadata={"model_id": model_id, "config_json": cfg.to_json()})


def init_checkpoint(cfg: ModelConfig, seed: int, scale: float = 0.02, model_id: str = "base") -> Checkpoint:
    """Seeded random initialization: normal(0, scale) matrices, unit norm gains."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    entries: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(("norm_attn", "norm_mlp", "final_norm")):
            entries[name] = np.ones(shape, dtype=np.float32)
        else:
            entries[name] = rng.normal(0.0, scale, size=shape).astype(np.float32)
    return Checkpoint(entries=entries, metadata={"model_id": model_id, "config_json": cfg.to_json()})


def tokenize(text: str, cfg: ModelConfig) -> list[int]:
    """BOS + raw UTF-8 bytes + EOS, truncated to ``max_seq_len`` keeping BOS."""
    if not text.strip():
        raise InputError("cannot tokenize empty text")
    ids = [BOS_ID] + list(text.encode("utf-8")) + [EOS_ID]
    return ids[: cfg.max_seq_len]


def encode_prompt(text: str, cfg: ModelConfig) -> list[int]:
    """BOS + raw bytes without EOS, for answer-continuation decoding."""
    if not text.strip():
        raise InputError("cannot encode empty prompt")
    ids = [BOS_ID] + list(text.encode("utf-8"))
    return ids[: cfg.max_seq_len]


def encode_example(instruction: str, output: str, cfg: ModelConfig) -> tuple[list[int], int]:
    """Token ids for instruction+output plus the index where output tokens start.

    The output region (answer bytes and the closing EOS) is what training and
    validation losses score; the instruction prefix is context only.
    """
    prompt = encode_prompt(instruction, cfg)
    ids = prompt + list(output.encode("utf-8")) + [EOS_ID]
    return ids[: cfg.max_seq_len], min(len(prompt), cfg.max_seq_len)


def _require(ckpt: Checkpoint, name: str, shape: tuple[int, ...]) -> np.ndarray:
    tensor = ckpt.entries.get(name)
    if tensor is None:
        raise DimensionError(f"checkpoint is missing tensor {name!r}")
    if tuple(tensor.shape) != shape:
        raise DimensionError(f"tensor {name!r} has shape {tuple(tensor.shape)}, expected {shape}")
    return tensor


def _rope_tables(positions: int, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.outer(np.arange(positions, dtype=np.float64), inv_freq)
    return np.cos(angles), np.sin(angles)


def _rope_apply(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (L, H, D); tables: (L, D/2), broadcast over heads
    x64 = x.astype(np.float64)
    half = x.shape[-1] // 2
    x1, x2 = x64[..., :half], x64[..., half:]
    c = cos[:, None, :]
    s = sin[:, None, :]
    out = np.concatenate((x1 * c - x2 * s, x1 * s + x2 * c), axis=-1)
    return out.astype(np.float32)


def _attention(xn: np.ndarray, wq, wk, wv, wo, cfg: ModelConfig) -> np.ndarray:
    seq_len = xn.shape[0]
    heads, dim = cfg.num_heads, cfg.head_dim
    q = matmul(xn, wq).reshape(seq_len, heads, dim)
    k = matmul(xn, wk).reshape(seq_len, heads, dim)
    v = matmul(xn, wv).reshape(seq_len, heads, dim)
    cos, sin = _rope_tables(seq_len, dim, cfg.rope_base)
    q = _rope_apply(q, cos, sin)
    k = _rope_apply(k, cos, sin)

    causal = np.tril(np.ones((seq_len, seq_len), dtype=bool))
    out_heads = np.empty((seq_len, heads, dim), dtype=np.float32)
    for h in range(heads):
        scores = (q[:, h, :].astype(np.float64) @ k[:, h, :].astype(np.float64).T) / np.sqrt(dim)
        scores = np.where(causal, scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=-1, keepdims=True)
        out_heads[:, h, :] = (weights @ v[:, h, :].astype(np.float64)).astype(np.float32)
    return matmul(out_heads.reshape(seq_len, cfg.embed_dim), wo)


def _silu(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    return (x64 / (1.0 + np.exp(-x64))).astype(np.float32)


def forward(ckpt: Checkpoint, cfg: ModelConfig, tokens) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the model over one token sequence.

    Returns ``(logits, hidden_states)`` where logits is (L_tok, vocab) and
    hidden_states is a list of ``num_layers + 1`` arrays of shape (L_tok, E):
    the embedding output followed by each block's residual-stream output.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("tokens must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(f"token id out of range for vocab size {cfg.vocab_size}")
    if ids.size > cfg.max_seq_len:
        raise InputError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")

    shapes = param_shapes(cfg)
    embed = _require(ckpt, "embed.tok", shapes["embed.tok"])

    x = embed[ids].astype(np.float32)
    hidden: list[np.ndarray] = [x.copy()]
    for i in range(cfg.num_layers):
        p = f"layers.{i}"
        xn = rms_norm(x, _require(ckpt, f"{p}.norm_attn", shapes[f"{p}.norm_attn"]), cfg.norm_eps)
        x = x + _attention(
            xn,
            _require(ckpt, f"{p}.attn.wq", shapes[f"{p}.attn.wq"]),
            _require(ckpt, f"{p}.attn.wk", shapes[f"{p}.attn.wk"]),
            _require(ckpt, f"{p}.attn.wv", shapes[f"{p}.attn.wv"]),
            _require(ckpt, f"{p}.attn.wo", shapes[f"{p}.attn.wo"]),
            cfg,
        )
        xn = rms_norm(x, _require(ckpt, f"{p}.norm_mlp", shapes[f"{p}.norm_mlp"]), cfg.norm_eps)
        gate = matmul(xn, _require(ckpt, f"{p}.mlp.w_gate", shapes[f"{p}.mlp.w_gate"]))
        up = matmul(xn, _require(ckpt, f"{p}.mlp.w_up", shapes[f"{p}.mlp.w_up"]))
        x = x + matmul(_silu(gate) * up, _require(ckpt, f"{p}.mlp.w_down", shapes[f"{p}.mlp.w_down"]))
        hidden.append(x.copy())

    final = rms_norm(x, _require(ckpt, "final_norm", shapes["final_norm"]), cfg.norm_eps)
    logits = matmul(final, _require(ckpt, "lm_head", shapes["lm_head"]))
    return logits, hidden


def greedy_decode(ckpt: Checkpoint, cfg: ModelConfig, prompt_ids, max_new_tokens: int = 16) -> list[int]:
    """Greedy argmax continuation of ``prompt_ids``; stops at EOS (excluded).

    Argmax ties resolve to the lowest token id, so an all-zero model emits
    token 0 repeatedly.
    """
    ids = list(prompt_ids)
    if not ids:
        raise InputError("prompt must be non-empty")
    generated: list[int] = []
    while len(generated) < max_new_tokens and len(ids) < cfg.max_seq_len:
        logits, _ = forward(ckpt, cfg, ids)
        nxt = int(np.argmax(logits[-1]))
        if nxt == EOS_ID:
            break
        generated.append(nxt)
        ids.append(nxt)
    return generated
