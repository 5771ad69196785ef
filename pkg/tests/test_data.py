from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptfed.data import (
    LabeledData,
    SyntheticTask,
    generate,
    largest_remainder,
    load_csv,
    make_prototypes,
    nearest_prototype_accuracy,
    partition_dirichlet,
    partition_pathological,
    save_csv,
)
from promptfed.prompts import ConfigurationError


def test_generate_shapes_and_split():
    d = generate(SyntheticTask(num_classes=5, feature_dim=8, n_per_class=10, seed=1))
    assert d.train.x.shape == (40, 8) and d.test.x.shape == (10, 8)
    assert np.array_equal(np.bincount(d.train.y), [8] * 5)
    assert np.array_equal(np.bincount(d.test.y), [2] * 5)


def test_prototypes_are_unit_and_spread():
    p = make_prototypes(SyntheticTask(num_classes=20, feature_dim=32, seed=3))
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-14)
    cos = np.abs(p @ p.T - np.eye(20))
    assert cos.max() <= 0.5


def test_impossible_prototype_placement_raises():
    with pytest.raises(ConfigurationError, match="prototypes"):
        make_prototypes(SyntheticTask(num_classes=10, feature_dim=2, max_abs_cosine=0.1))


def test_noise_free_data_is_perfectly_separable():
    d = generate(SyntheticTask(num_classes=6, feature_dim=16, noise_std=0.0, n_per_class=5))
    assert nearest_prototype_accuracy(d.test, d.prototypes) == 1.0


def test_generation_is_deterministic():
    a = generate(SyntheticTask(seed=9, n_per_class=20))
    b = generate(SyntheticTask(seed=9, n_per_class=20))
    assert np.array_equal(a.train.x, b.train.x) and np.array_equal(a.test.y, b.test.y)


@pytest.mark.parametrize("kwargs", [dict(num_classes=0), dict(noise_std=-1.0), dict(n_per_class=0)])
def test_bad_task_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        SyntheticTask(**kwargs)


def test_pathological_partition_is_disjoint():
    d = generate(SyntheticTask(num_classes=20, n_per_class=20, seed=2))
    shards = partition_pathological(d, 10, 2, seed=2)
    seen = [set(np.unique(s.train.y)) for s in shards]
    assert all(len(c) == 2 for c in seen)
    assert len(set().union(*seen)) == 20
    for s in shards:
        assert set(np.unique(s.test.y)) == set(np.unique(s.train.y))


def test_pathological_needs_enough_classes():
    d = generate(SyntheticTask(num_classes=10, n_per_class=5))
    with pytest.raises(ConfigurationError, match="k\\*M <= L"):
        partition_pathological(d, 10, 2, seed=0)


def test_largest_remainder_examples():
    assert largest_remainder(10, np.array([0.5, 0.5])).tolist() == [5, 5]
    assert largest_remainder(10, np.array([1 / 3, 1 / 3, 1 / 3])).tolist() == [4, 3, 3]
    assert largest_remainder(7, np.array([0.0, 1.0])).tolist() == [0, 7]


@given(st.integers(0, 500), st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12))
def test_largest_remainder_sums_and_tracks(total, weights):
    p = np.array(weights) / sum(weights)
    c = largest_remainder(total, p)
    assert c.sum() == total and np.all(np.abs(c - total * p) < 1)


def test_dirichlet_partition_covers_every_sample_once():
    d = generate(SyntheticTask(num_classes=10, n_per_class=50, seed=4))
    shards = partition_dirichlet(d, 10, 0.3, seed=4)
    assert sum(len(s.train) for s in shards) == len(d.train)
    assert sum(len(s.test) for s in shards) == len(d.test)
    stacked = np.vstack([s.train.x for s in shards])
    assert len(np.unique(stacked, axis=0)) == len(d.train)
    assert all(len(s.train) and len(s.test) for s in shards)


def test_huge_alpha_is_nearly_uniform():
    d = generate(SyntheticTask(num_classes=10, n_per_class=100, seed=5))
    shards = partition_dirichlet(d, 10, 1e6, seed=5)
    for s in shards:
        counts = np.bincount(s.train.y, minlength=10)
        assert np.all(np.abs(counts - 8) <= 1)


def _max_class_share(shards, num_classes):
    totals = np.zeros(num_classes)
    top = np.zeros(num_classes)
    for s in shards:
        counts = np.bincount(s.train.y, minlength=num_classes)
        totals += counts
        top = np.maximum(top, counts)
    return top / totals


def test_small_alpha_concentrates_classes():
    """Averaged over 100 seeds, the largest single-client share of a class is at least 40%."""
    means = []
    for seed in range(100):
        d = generate(SyntheticTask(num_classes=10, n_per_class=50, seed=seed))
        means.append(_max_class_share(partition_dirichlet(d, 10, 0.3, seed=seed), 10).mean())
    assert np.mean(means) >= 0.4


def test_bad_dirichlet_arguments():
    d = generate(SyntheticTask(num_classes=3, n_per_class=5))
    with pytest.raises(ConfigurationError):
        partition_dirichlet(d, 2, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        partition_dirichlet(d, 0, 1.0, seed=0)


def test_empty_client_exhausts_retries():
    d = generate(SyntheticTask(num_classes=2, n_per_class=2, train_fraction=0.5))
    with pytest.raises(ConfigurationError, match="empty"):
        partition_dirichlet(d, 10, 0.01, seed=0)


def test_csv_round_trip_is_exact(tmp_path):
    d = generate(SyntheticTask(num_classes=3, feature_dim=5, n_per_class=4, seed=8))
    path = tmp_path / "train.csv"
    save_csv(d.train, path)
    back = load_csv(path)
    assert np.array_equal(back.x, d.train.x) and np.array_equal(back.y, d.train.y)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3), st.integers(0, 9))
def test_csv_round_trip_arbitrary_floats(tmp_path_factory, row, label):
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    data = LabeledData(np.array([row]), np.array([label]))
    save_csv(data, path)
    back = load_csv(path)
    assert np.array_equal(back.x, data.x) and back.y.tolist() == [label]


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,a,b\n0,1,2\n")
    with pytest.raises(ValueError, match="header"):
        load_csv(path)
