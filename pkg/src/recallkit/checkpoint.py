"""Named-tensor checkpoint container and the per-layer parameter grouping.

File layout (extension ``.st``): an 8-byte little-endian header length, a JSON
header mapping tensor name -> {"dtype": "F32", "shape": [...], "data_offsets":
[begin, end]} (offsets relative to the payload), then one contiguous
little-endian float32 payload.  A ``__metadata__`` entry carries string
metadata; the keys ``model_id`` and ``config_json`` are reserved for model
identity and the serialized model configuration.

Round-trips are byte-exact: loading a saved checkpoint reproduces every tensor
bit-for-bit and preserves name order.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateNameError,
    GroupingError,
    LayoutError,
    MalformedHeaderError,
    NumericDomainError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)

__all__ = ["Checkpoint", "LayerGroupIndex", "save", "load", "build_layer_index"]

_METADATA_KEY = "__metadata__"

_BLOCK_NAME_RE = re.compile(
    r"^layers\.(\d+)\.(attn\.(wq|wk|wv|wo)|mlp\.(w_gate|w_up|w_down)|norm_attn|norm_mlp)$"
)


@dataclass
class Checkpoint:
    """Ordered map of tensor name -> float32 array, plus string metadata."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.entries.values())


@dataclass
class LayerGroupIndex:
    """Partition of tensor names into depth-ordered merge groups.

    Group 0 holds the embedding, group i the i-th transformer block, and the
    final group additionally holds the trailing tensors (final norm, lm head).
    """

    groups: list[list[str]]

    @property
    def group_count(self) -> int:
        return len(self.groups)

    def all_names(self) -> list[str]:
        return [name for group in self.groups for name in group]


def save(ckpt: Checkpoint, path) -> None:
    """Write ``ckpt`` to ``path`` in the container format above."""
    header: dict[str, object] = {}
    if ckpt.metadata:
        header[_METADATA_KEY] = {str(k): str(v) for k, v in ckpt.metadata.items()}
    offset = 0
    payload_parts: list[bytes] = []
    for name, tensor in ckpt.entries.items():
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        raw = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payload_parts.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payload_parts:
            fh.write(raw)


def _parse_header(blob: bytes) -> dict:
    def reject_duplicates(pairs):
        seen = set()
        out = {}
        for key, value in pairs:
            if key in seen:
                raise DuplicateNameError(f"duplicate tensor name in header: {key!r}")
            seen.add(key)
            out[key] = value
        return out

    try:
        header = json.loads(blob.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except DuplicateNameError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")
    return header


def load(path, allow_nonfinite: bool = False) -> Checkpoint:
    """Read a checkpoint, validating layout and (by default) finiteness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise MalformedHeaderError(f"file too short for header length field: {len(blob)} bytes")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if header_len == 0 or 8 + header_len > len(blob):
        raise MalformedHeaderError(
            f"declared header length {header_len} exceeds file size {len(blob)}"
        )
    header = _parse_header(blob[8 : 8 + header_len])
    payload = blob[8 + header_len :]

    metadata: dict[str, str] = {}
    if _METADATA_KEY in header:
        meta = header.pop(_METADATA_KEY)
        if not isinstance(meta, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
        ):
            raise MalformedHeaderError("__metadata__ must be a string-to-string map")
        metadata = dict(meta)

    entries: dict[str, np.ndarray] = {}
    ranges: list[tuple[int, int, str]] = []
    for name, info in header.items():
        if not isinstance(info, dict):
            raise MalformedHeaderError(f"entry {name!r} is not an object")
        dtype = info.get("dtype")
        if dtype != "F32":
            raise UnsupportedDtypeError(f"tensor {name!r} has unsupported dtype {dtype!r}")
        shape = info.get("shape")
        if (
            not isinstance(shape, list)
            or len(shape) == 0
            or not all(isinstance(d, int) and d >= 1 for d in shape)
        ):
            raise MalformedHeaderError(f"tensor {name!r} has invalid shape {shape!r}")
        offsets = info.get("data_offsets")
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) and o >= 0 for o in offsets)
            or offsets[0] > offsets[1]
        ):
            raise MalformedHeaderError(f"tensor {name!r} has invalid data_offsets {offsets!r}")
        begin, end = offsets
        nbytes = 4 * int(np.prod(shape))
        if end - begin != nbytes:
            raise LayoutError(
                f"tensor {name!r}: byte range [{begin}, {end}) does not match shape {shape}"
            )
        if end > len(payload):
            raise TruncatedPayloadError(
                f"tensor {name!r} needs bytes up to {end}, payload has {len(payload)}"
            )
        ranges.append((begin, end, name))

    ranges.sort(key=lambda r: (r[0], r[1]))
    cursor = 0
    for begin, end, name in ranges:
        if begin < cursor:
            raise LayoutError(f"tensor {name!r} overlaps a previous byte range")
        if begin > cursor:
            raise LayoutError(f"gap in payload before tensor {name!r} at byte {begin}")
        cursor = end
    if cursor != len(payload):
        raise LayoutError(f"payload has {len(payload) - cursor} trailing bytes beyond all tensors")

    for name, info in header.items():
        begin, end = info["data_offsets"]
        arr = np.frombuffer(payload[begin:end], dtype="<f4").reshape(info["shape"])
        arr = np.ascontiguousarray(arr)
        if not allow_nonfinite and not np.all(np.isfinite(arr)):
            raise NumericDomainError(f"tensor {name!r} contains NaN or Inf values")
        entries[name] = arr
    return Checkpoint(entries=entries, metadata=metadata)


def group_of(name: str, num_layers: int) -> int:
    """Map a tensor name to its merge-group id under the naming grammar."""
    if name == "embed.tok":
        return 0
    if name in ("final_norm", "lm_head"):
        return num_layers
    m = _BLOCK_NAME_RE.match(name)
    if m is not None:
        block = int(m.group(1))
        if block >= num_layers:
            raise GroupingError(
                f"tensor {name!r} references block {block} but the model has {num_layers} layers"
            )
        return block + 1
    raise GroupingError(f"tensor name {name!r} does not match the naming grammar")


def build_layer_index(ckpt: Checkpoint, cfg) -> LayerGroupIndex:
    """Partition ``ckpt``'s tensor names into ``num_layers + 1`` ordered groups.

    ``cfg`` is a model configuration (anything with ``num_layers``) or a plain
    layer count.  Unknown or out-of-range names raise :class:`GroupingError`.
    """
    num_layers = cfg if isinstance(cfg, int) else int(cfg.num_layers)
    if num_layers < 1:
        raise GroupingError(f"layer count must be >= 1, got {num_layers}")
    groups: list[list[str]] = [[] for _ in range(num_layers + 1)]
    for name in ckpt.entries:
        groups[group_of(name, num_layers)].append(name)
    return LayerGroupIndex(groups=groups)
