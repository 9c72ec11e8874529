"""Stage manifests: content hashes of inputs plus the resolved configuration.

Manifests are deliberately timestamp-free so that re-running a stage with the
same seed and inputs produces byte-identical artifacts and manifests.
"""

from __future__ import annotations

import hashlib
import json
import os

__all__ = ["sha256_file", "write_manifest", "manifest_matches", "TOOL_VERSION"]

TOOL_VERSION = "0.1.0"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _payload(stage: str, config: dict, input_paths: list[str], outputs: list[str]) -> dict:
    return {
        "tool": "recallkit",
        "version": TOOL_VERSION,
        "stage": stage,
        "config": config,
        "inputs": {os.path.basename(str(p)): sha256_file(p) for p in sorted(map(str, input_paths))},
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
    }


def write_manifest(path, stage: str, config: dict, input_paths: list[str], outputs: list[str]) -> None:
    payload = _payload(stage, config, input_paths, outputs)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def manifest_matches(path, stage: str, config: dict, input_paths: list[str]) -> bool:
    """True when an existing manifest records the same stage, config, and input hashes."""
    if not os.path.exists(path):
        return False
    try:
        with open(path) as fh:
            recorded = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return False
    current = _payload(stage, config, input_paths, outputs=[])
    for key in ("tool", "version", "stage", "config", "inputs"):
        if recorded.get(key) != current[key]:
            return False
    outputs = recorded.get("outputs", [])
    base = os.path.dirname(str(path))
    return all(os.path.exists(os.path.join(base, name)) for name in outputs)
