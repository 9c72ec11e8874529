"""Reader/writer for the shared checkpoint container format.

Layout: 8-byte little-endian header length, JSON header mapping tensor name ->
{"dtype": "F32", "shape": [...], "data_offsets": [begin, end]} with offsets
relative to the payload, optional "__metadata__" string map, then a contiguous
little-endian float32 payload.  This is an independent implementation of the
toolkit's on-disk interface; the two packages share only the bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_METADATA_KEY = "__metadata__"


def save_tensors(entries: dict[str, np.ndarray], metadata: dict[str, str], path) -> None:
    header: dict[str, object] = {}
    if metadata:
        header[_METADATA_KEY] = {str(k): str(v) for k, v in metadata.items()}
    offset = 0
    chunks: list[bytes] = []
    for name, tensor in entries.items():
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        raw = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ValueError(f"{path}: too short for a container header")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise ValueError(f"{path}: header length {header_len} exceeds file size")
    header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    payload = blob[8 + header_len :]
    metadata = {str(k): str(v) for k, v in header.pop(_METADATA_KEY, {}).items()}
    entries: dict[str, np.ndarray] = {}
    for name, info in header.items():
        if info.get("dtype") != "F32":
            raise ValueError(f"{path}: tensor {name!r} has unsupported dtype {info.get('dtype')!r}")
        begin, end = info["data_offsets"]
        arr = np.frombuffer(payload[begin:end], dtype="<f4").reshape(info["shape"])
        entries[name] = np.ascontiguousarray(arr)
    return entries, metadata
