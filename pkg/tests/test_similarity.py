import math

import numpy as np
import pytest

from recallkit.errors import AlignmentError, CompletenessError, InputError, NumericDomainError
from recallkit.extraction import RepresentationSet
from recallkit.similarity import (
    SimilarityTable,
    build_table,
    cka_similarity,
    cosine_similarity,
    euclidean_similarity,
    load_table,
    mmd_similarity,
    rbf_similarity,
    write_table_csv,
)


def _reps(model_id: str, layers: list) -> RepresentationSet:
    arrays = [np.asarray(l, np.float32) for l in layers]
    return RepresentationSet(
        model_id=model_id,
        sample_ids=[str(i) for i in range(arrays[0].shape[0])],
        layers=arrays,
    )


def test_rbf_identical_rows_exactly_one():
    a = _reps("a", [[[1.0, 2.0], [3.0, 4.0]]])
    b = _reps("b", [[[1.0, 2.0], [3.0, 4.0]]])
    assert rbf_similarity(a, b, 0, sigma=1.0) == 1.0


def test_rbf_scalar_case():
    a = _reps("a", [[[1.0, 0.0]]])
    b = _reps("b", [[[0.0, 0.0]]])
    assert rbf_similarity(a, b, 0, sigma=1.0) == pytest.approx(0.606531, abs=1e-6)


def test_rbf_flat_kernel_limit():
    rng = np.random.default_rng(0)
    a = _reps("a", [rng.normal(size=(5, 4))])
    b = _reps("b", [rng.normal(size=(5, 4))])
    assert rbf_similarity(a, b, 0, sigma=1e6) == pytest.approx(1.0, abs=1e-6)


def test_rbf_sigma_positive():
    a = _reps("a", [[[1.0]]])
    with pytest.raises(NumericDomainError):
        rbf_similarity(a, a, 0, sigma=0.0)


def test_rbf_misaligned_ids():
    a = _reps("a", [[[1.0], [2.0]]])
    b = _reps("b", [[[1.0], [2.0]]])
    b.sample_ids = ["7", "8"]
    with pytest.raises(AlignmentError):
        rbf_similarity(a, b, 0)


def test_rbf_monotone_in_distance():
    # shrinking every pairwise distance never lowers similarity
    rng = np.random.default_rng(1)
    base = rng.normal(size=(6, 3))
    offset = rng.normal(size=(6, 3))
    a = _reps("a", [base])
    far = _reps("b", [base + offset])
    near = _reps("c", [base + 0.5 * offset])
    assert rbf_similarity(a, near, 0) >= rbf_similarity(a, far, 0)


def test_rbf_monotone_in_sigma():
    rng = np.random.default_rng(2)
    a = _reps("a", [rng.normal(size=(4, 3))])
    b = _reps("b", [rng.normal(size=(4, 3))])
    values = [rbf_similarity(a, b, 0, sigma=s) for s in (0.25, 0.5, 1.0, 2.0, 8.0)]
    assert all(lo <= hi + 1e-12 for lo, hi in zip(values, values[1:]))


def test_cosine_self_and_antipodal():
    rows = [[0.5, -1.0], [2.0, 0.25]]
    a = _reps("a", [rows])
    b = _reps("b", [rows])
    assert cosine_similarity(a, b, 0) == pytest.approx(1.0, abs=1e-7)
    neg = _reps("c", [(-np.asarray(rows)).tolist()])
    assert cosine_similarity(a, neg, 0) == pytest.approx(-1.0, abs=1e-7)


def test_cosine_hand_value():
    a = _reps("a", [[[1.0, 0.0]]])
    b = _reps("b", [[[1.0, 1.0]]])
    assert cosine_similarity(a, b, 0) == pytest.approx(0.707107, abs=1e-6)


def test_cosine_orthogonal_zero():
    a = _reps("a", [[[1.0, 0.0]]])
    b = _reps("b", [[[0.0, 3.0]]])
    assert cosine_similarity(a, b, 0) == pytest.approx(0.0, abs=1e-9)


def test_cosine_zero_norm_rejected():
    a = _reps("a", [[[0.0, 0.0]]])
    b = _reps("b", [[[1.0, 0.0]]])
    with pytest.raises(NumericDomainError):
        cosine_similarity(a, b, 0)


def test_euclidean_three_collinear_models():
    reps = {
        "a": _reps("a", [[[0.0]]]),
        "b": _reps("b", [[[1.0]]]),
        "c": _reps("c", [[[3.0]]]),
    }
    values = euclidean_similarity(reps, 0)
    assert values[("a", "b")] == pytest.approx(1 / 3)
    assert values[("b", "c")] == pytest.approx(2 / 3)
    assert values[("a", "c")] == pytest.approx(1.0)
    assert values[("a", "a")] == 0.0


def test_euclidean_identical_models_all_zero():
    rows = np.random.default_rng(3).normal(size=(4, 2))
    reps = {"a": _reps("a", [rows]), "b": _reps("b", [rows])}
    values = euclidean_similarity(reps, 0)
    assert values[("a", "b")] == 0.0


def test_cka_self_alignment():
    x = np.random.default_rng(4).normal(size=(10, 6))
    assert cka_similarity(x, x) == pytest.approx(1.0, abs=1e-9)


def test_cka_orthogonal_invariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(12, 5))
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert cka_similarity(x, x @ q) == pytest.approx(1.0, abs=1e-6)


def test_cka_scale_invariance():
    x = np.random.default_rng(6).normal(size=(9, 4))
    assert cka_similarity(x, 3.7 * x) == pytest.approx(1.0, abs=1e-6)


def test_cka_zero_variance_rejected():
    x = np.ones((5, 3))
    with pytest.raises(NumericDomainError):
        cka_similarity(x, x)  # centering removes everything


def test_cka_needs_two_samples():
    with pytest.raises(InputError):
        cka_similarity(np.ones((1, 3)), np.ones((1, 3)))


def test_mmd_identical_sets_zero():
    x = np.random.default_rng(7).normal(size=(8, 3))
    assert abs(mmd_similarity(x, x.copy())) <= 1e-9


def test_mmd_scalar_case():
    x = np.array([[0.0]])
    y = np.array([[1.0]])
    expected = 1.0 + 1.0 - 2.0 * math.exp(-0.5)
    assert mmd_similarity(x, y, sigma=1.0) == pytest.approx(expected, abs=1e-9)
    assert mmd_similarity(x, y, sigma=1.0) == pytest.approx(0.786939, abs=1e-6)


def test_mmd_symmetry():
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=(6, 2)), rng.normal(size=(9, 2))
    assert mmd_similarity(x, y) == pytest.approx(mmd_similarity(y, x), abs=1e-12)


# ------------------------------------------------------------------ table


def _random_model_reps(seed: int, n_models=3, n_layers=2, m=5, dim=4):
    rng = np.random.default_rng(seed)
    return {
        f"m{i}": _reps(f"m{i}", [rng.normal(size=(m, dim)) for _ in range(n_layers)])
        for i in range(n_models)
    }


def test_table_identical_models_rbf_all_ones():
    rows = np.random.default_rng(9).normal(size=(4, 3))
    reps = {"a": _reps("a", [rows, rows * 2]), "b": _reps("b", [rows, rows * 2])}
    table = build_table(reps, metric="rbf", sigma=1.0)
    assert np.allclose(table.values, 1.0)


def test_table_symmetric():
    table = build_table(_random_model_reps(10), metric="rbf")
    assert np.allclose(table.values, np.transpose(table.values, (0, 2, 1)))


def test_table_matches_two_loop_oracle():
    reps = _random_model_reps(11, n_models=3, n_layers=2)
    table = build_table(reps, metric="rbf", sigma=0.7)
    ids = list(reps)
    for layer in range(2):
        for p in ids:
            for q in ids:
                if p == q:
                    expected = 1.0
                else:
                    # independent re-computation straight from the formula
                    xp = reps[p].layers[layer].astype(np.float64)
                    xq = reps[q].layers[layer].astype(np.float64)
                    acc = 0.0
                    for k in range(xp.shape[0]):
                        d2 = float(((xp[k] - xq[k]) ** 2).sum())
                        acc += math.exp(-d2 / (2 * 0.7**2))
                    expected = acc / xp.shape[0]
                assert table.value(layer, p, q) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("metric,self_value", [("rbf", 1.0), ("cosine", 1.0), ("cka", 1.0), ("mmd", 0.0), ("euclidean", 0.0)])
def test_table_self_entries(metric, self_value):
    table = build_table(_random_model_reps(12), metric=metric, sigma=1.0)
    for layer in range(table.num_layers):
        assert np.allclose(np.diag(table.values[layer]), self_value)


def test_table_typical_subset():
    reps = _random_model_reps(13, m=6)
    table_all = build_table(reps, metric="rbf")
    table_sub = build_table(reps, typical_ids=["1", "4"], metric="rbf")
    assert table_sub.num_layers == table_all.num_layers
    sub = {m: r.subset(["1", "4"]) for m, r in reps.items()}
    expected = rbf_similarity(sub["m0"], sub["m1"], 0)
    assert table_sub.value(0, "m0", "m1") == pytest.approx(expected, rel=1e-12)


def test_table_misaligned_models_rejected():
    reps = _random_model_reps(14)
    reps["m1"].sample_ids = ["9"] * len(reps["m1"].sample_ids)
    with pytest.raises(AlignmentError):
        build_table(reps)


def test_table_needs_two_models():
    reps = _random_model_reps(15, n_models=1)
    with pytest.raises(CompletenessError):
        build_table(reps)


def test_table_json_and_csv_round_trip(tmp_path):
    table = build_table(_random_model_reps(16), metric="cka")
    json_path = tmp_path / "table.json"
    json_path.write_text(table.to_json())
    again = load_table(json_path)
    assert again.metric == table.metric
    assert again.model_ids == table.model_ids
    assert np.allclose(again.values, table.values)
    assert again.meta == {"cka_centered": True}

    csv_path = tmp_path / "table.csv"
    write_table_csv(table, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "layer,p,q,value"
    assert len(lines) == 1 + table.num_layers * len(table.model_ids) ** 2
