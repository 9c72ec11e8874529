import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recallkit.checkpoint import Checkpoint, build_layer_index, load, save
from recallkit.errors import (
    DuplicateNameError,
    GroupingError,
    LayoutError,
    MalformedHeaderError,
    NumericDomainError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)
from recallkit.model import ModelConfig, param_shapes


def _write_raw(path, header: dict | str, payload: bytes) -> str:
    blob = header.encode() if isinstance(header, str) else json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    return str(path)


def test_round_trip_single_tensor(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "one.st"
    save(Checkpoint(entries={"embed.tok": arr}, metadata={"model_id": "x"}), path)
    loaded = load(path)
    assert list(loaded.entries) == ["embed.tok"]
    assert loaded.entries["embed.tok"].tobytes() == arr.tobytes()
    assert loaded.metadata == {"model_id": "x"}


def test_round_trip_preserves_name_order(tmp_path):
    names = ["zzz", "aaa", "mmm"]
    ckpt = Checkpoint(entries={n: np.full((2,), i, dtype=np.float32) for i, n in enumerate(names)})
    path = tmp_path / "order.st"
    save(ckpt, path)
    assert list(load(path).entries) == names


def test_empty_checkpoint_is_valid(tmp_path):
    path = tmp_path / "empty.st"
    save(Checkpoint(), path)
    loaded = load(path)
    assert loaded.entries == {} and loaded.metadata == {}


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=1, max_value=4),
            st.integers(min_value=1, max_value=5),
        ),
        min_size=0,
        max_size=4,
    ),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_round_trip_random_bit_exact(tmp_path_factory, shapes, seed):
    rng = np.random.default_rng(seed)
    ckpt = Checkpoint(
        entries={
            f"t{i}": rng.normal(size=shape).astype(np.float32) for i, shape in enumerate(shapes)
        }
    )
    path = tmp_path_factory.mktemp("rt") / "c.st"
    save(ckpt, path)
    loaded = load(path)
    assert list(loaded.entries) == list(ckpt.entries)
    for name in ckpt.entries:
        assert loaded.entries[name].tobytes() == ckpt.entries[name].tobytes()


def test_nonfinite_rejected_unless_allowed(tmp_path):
    arr = np.array([1.0, np.nan], dtype=np.float32)
    path = tmp_path / "nan.st"
    save(Checkpoint(entries={"t": arr}), path)
    with pytest.raises(NumericDomainError):
        load(path)
    loaded = load(path, allow_nonfinite=True)
    assert loaded.entries["t"].tobytes() == arr.tobytes()  # NaN payload bits preserved


def test_file_too_short():
    import io, tempfile, os

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "short.st")
        with open(path, "wb") as fh:
            fh.write(b"\x01\x02")
        with pytest.raises(MalformedHeaderError):
            load(path)


def test_header_length_exceeds_file(tmp_path):
    path = tmp_path / "big.st"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", 10_000))
        fh.write(b"{}")
    with pytest.raises(MalformedHeaderError):
        load(path)


def test_header_not_json(tmp_path):
    path = _write_raw(tmp_path / "bad.st", "this is not json", b"")
    with pytest.raises(MalformedHeaderError):
        load(path)


def test_unsupported_dtype(tmp_path):
    header = {"t": {"dtype": "F64", "shape": [1], "data_offsets": [0, 8]}}
    path = _write_raw(tmp_path / "dtype.st", header, b"\x00" * 8)
    with pytest.raises(UnsupportedDtypeError):
        load(path)


def test_duplicate_names(tmp_path):
    entry = '{"dtype": "F32", "shape": [1], "data_offsets": [0, 4]}'
    header = '{"t": %s, "t": %s}' % (entry, entry)
    path = _write_raw(tmp_path / "dup.st", header, b"\x00" * 4)
    with pytest.raises(DuplicateNameError):
        load(path)


def test_overlapping_ranges(tmp_path):
    header = {
        "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
        "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
    }
    path = _write_raw(tmp_path / "overlap.st", header, b"\x00" * 12)
    with pytest.raises(LayoutError):
        load(path)


def test_truncated_payload(tmp_path):
    header = {"t": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}
    path = _write_raw(tmp_path / "trunc.st", header, b"\x00" * 8)
    with pytest.raises(TruncatedPayloadError):
        load(path)


def test_payload_gap(tmp_path):
    header = {
        "a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},
        "b": {"dtype": "F32", "shape": [1], "data_offsets": [8, 12]},
    }
    path = _write_raw(tmp_path / "gap.st", header, b"\x00" * 12)
    with pytest.raises(LayoutError):
        load(path)


def test_range_shape_mismatch(tmp_path):
    header = {"t": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}
    path = _write_raw(tmp_path / "mismatch.st", header, b"\x00" * 8)
    with pytest.raises(LayoutError):
        load(path)


# ----------------------------------------------------------- layer grouping


def _model_ckpt(cfg: ModelConfig) -> Checkpoint:
    return Checkpoint(
        entries={name: np.zeros(shape, np.float32) for name, shape in param_shapes(cfg).items()}
    )


def test_two_block_grouping(tiny_cfg):
    index = build_layer_index(_model_ckpt(tiny_cfg), tiny_cfg)
    assert index.group_count == 3
    assert index.groups[0] == ["embed.tok"]
    assert all(n.startswith("layers.0.") for n in index.groups[1])
    tail = set(index.groups[2])
    assert {"final_norm", "lm_head"} <= tail
    assert all(n.startswith("layers.1.") for n in tail - {"final_norm", "lm_head"})


def test_thirty_two_block_grouping():
    cfg = ModelConfig(embed_dim=4, num_layers=32, num_heads=2, mlp_hidden=4, max_seq_len=8)
    index = build_layer_index(_model_ckpt(cfg), cfg)
    assert index.group_count == 33


def test_partition_property(tiny_cfg):
    ckpt = _model_ckpt(tiny_cfg)
    index = build_layer_index(ckpt, tiny_cfg)
    names = index.all_names()
    assert sorted(names) == sorted(ckpt.entries)
    assert len(names) == len(set(names))
    # grouped parameter count equals checkpoint parameter count
    grouped = sum(ckpt.entries[n].size for n in names)
    assert grouped == ckpt.parameter_count()


def test_block_index_out_of_range(tiny_cfg):
    ckpt = _model_ckpt(tiny_cfg)
    ckpt.entries["layers.5.attn.wq"] = np.zeros((8, 8), np.float32)
    with pytest.raises(GroupingError, match="layers.5"):
        build_layer_index(ckpt, 4)


def test_unknown_name_lists_orphan(tiny_cfg):
    ckpt = _model_ckpt(tiny_cfg)
    ckpt.entries["mystery.weight"] = np.zeros((2,), np.float32)
    with pytest.raises(GroupingError, match="mystery.weight"):
        build_layer_index(ckpt, tiny_cfg)
