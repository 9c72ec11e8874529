import itertools

import numpy as np
import pytest

from recallkit.clustering import kmeans, select_typical, TypicalDataset
from recallkit.errors import InputError
from recallkit.extraction import RepresentationSet

FOUR_POINTS = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]], np.float32)


def exhaustive_two_partition(points: np.ndarray):
    """Oracle: best 2-cluster split by brute force over all nonempty bipartitions."""
    n = len(points)
    best = (np.inf, None)
    for mask in range(1, 2 ** (n - 1)):  # fix point 0 in cluster A to kill symmetry
        in_a = [bool(mask & (1 << i)) or i == 0 for i in range(n)]
        a = points[[i for i in range(n) if in_a[i]]]
        b = points[[i for i in range(n) if not in_a[i]]]
        if len(b) == 0:
            continue
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        inertia = float(((a - ca) ** 2).sum() + ((b - cb) ** 2).sum())
        if inertia < best[0]:
            best = (inertia, (ca, cb))
    return best


def test_kmeans_matches_exhaustive_oracle():
    oracle_inertia, (ca, cb) = exhaustive_two_partition(FOUR_POINTS)
    result = kmeans(FOUR_POINTS, k=2, seed=0)
    assert result.inertia == pytest.approx(oracle_inertia, abs=1e-6)
    got = sorted(map(tuple, result.centers.tolist()))
    want = sorted([tuple(ca.tolist()), tuple(cb.tolist())])
    assert np.allclose(got, want, atol=1e-6)


def test_kmeans_k_equals_n():
    result = kmeans(FOUR_POINTS, k=4, seed=1)
    assert result.inertia == pytest.approx(0.0, abs=1e-9)
    assert sorted(map(tuple, result.centers.tolist())) == sorted(map(tuple, FOUR_POINTS.tolist()))


def test_kmeans_degenerate_identical_points():
    pts = np.ones((6, 3), np.float32)
    result = kmeans(pts, k=2, seed=0)
    assert result.inertia == pytest.approx(0.0, abs=1e-9)


def test_kmeans_k_greater_than_n():
    with pytest.raises(InputError):
        kmeans(FOUR_POINTS, k=5, seed=0)


def test_kmeans_assignment_is_nearest_center():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(40, 5)).astype(np.float32)
    result = kmeans(pts, k=4, seed=3)
    d2 = ((pts[:, None, :].astype(np.float64) - result.centers[None].astype(np.float64)) ** 2).sum(-1)
    assert np.array_equal(result.assignment, np.argmin(d2, axis=1))


def test_kmeans_more_iterations_never_worse():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(60, 4)).astype(np.float32)
    short = kmeans(pts, k=5, seed=4, max_iter=1)
    long = kmeans(pts, k=5, seed=4, max_iter=100)
    assert long.inertia <= short.inertia + 1e-9


def test_kmeans_deterministic():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(30, 3)).astype(np.float32)
    a, b = kmeans(pts, k=3, seed=5), kmeans(pts, k=3, seed=5)
    assert a.centers.tobytes() == b.centers.tobytes()
    assert np.array_equal(a.assignment, b.assignment)


def _reps_from_layers(layers: list[np.ndarray]) -> RepresentationSet:
    return RepresentationSet(
        model_id="m",
        sample_ids=[str(i) for i in range(layers[0].shape[0])],
        layers=[l.astype(np.float32) for l in layers],
    )


def test_select_typical_two_far_clusters():
    reps = _reps_from_layers([FOUR_POINTS])
    typ = select_typical(reps, m_per_layer=2, layers="all", seed=0)
    # each selected id must be the dataset row nearest one oracle center
    _, (ca, cb) = exhaustive_two_partition(FOUR_POINTS)
    expected = set()
    for center in (ca, cb):
        expected.add(str(int(np.argmin(((FOUR_POINTS - center) ** 2).sum(axis=1)))))
    assert set(typ.sample_ids) == expected
    assert all(sid in reps.sample_ids for sid in typ.sample_ids)


def test_select_typical_m_equals_n_returns_everything():
    rng = np.random.default_rng(6)
    layer = rng.normal(size=(7, 3)).astype(np.float32)
    for policy in ("all", "last", [0]):
        reps = _reps_from_layers([layer, layer * 2.0])
        typ = select_typical(reps, m_per_layer=7, layers=policy, seed=1)
        assert sorted(typ.sample_ids, key=int) == [str(i) for i in range(7)]


def test_select_typical_dedups_across_layers():
    reps = _reps_from_layers([FOUR_POINTS, FOUR_POINTS])  # identical layers select same ids
    typ = select_typical(reps, m_per_layer=2, layers="all", seed=0)
    assert len(typ.sample_ids) == len(set(typ.sample_ids)) == 2
    for sid in typ.sample_ids:
        assert typ.provenance[sid] == [0, 1]


def test_select_typical_seed_reproducible():
    rng = np.random.default_rng(7)
    layers = [rng.normal(size=(50, 4)).astype(np.float32) for _ in range(3)]
    a = select_typical(_reps_from_layers(layers), 5, layers="all", seed=42)
    b = select_typical(_reps_from_layers(layers), 5, layers="all", seed=42)
    assert a.sample_ids == b.sample_ids and a.provenance == b.provenance


def test_select_typical_validates_inputs():
    reps = _reps_from_layers([FOUR_POINTS])
    with pytest.raises(InputError):
        select_typical(reps, m_per_layer=9, layers="all", seed=0)
    with pytest.raises(InputError):
        select_typical(reps, m_per_layer=2, layers=[], seed=0)
    with pytest.raises(InputError):
        select_typical(reps, m_per_layer=2, layers=[4], seed=0)


def test_typical_dataset_json_round_trip():
    typ = TypicalDataset(sample_ids=["3", "1"], provenance={"3": [0], "1": [0, 2]}, seed=9)
    again = TypicalDataset.from_json(typ.to_json())
    assert again == typ
