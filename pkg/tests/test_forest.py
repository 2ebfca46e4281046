"""Tests for the from-scratch random forest."""

import numpy as np
import pytest

from mitotyper.errors import DegenerateTrainingError, InsufficientTreesError
from mitotyper.forest import (
    RandomForestModel,
    TrainConfig,
    Tree,
    best_split,
    load_model,
    oob_details,
    oob_error,
    predict_class,
    predict_proba,
    save_model,
    train_forest,
)


def exhaustive_best_split(x, y, n_classes):
    """Plain-loop search over every (feature, midpoint) pair.

    Scores with the same Q = S_L/n_L + S_R/n_R float64 expression so exact
    ties agree with the implementation's tie-break.
    """
    n, p = x.shape
    parent = np.bincount(y, minlength=n_classes)
    best_q = float((parent.astype(np.float64) ** 2).sum()) / n
    best = None
    for f in range(p):
        distinct = sorted(set(x[:, f].tolist()))
        for lo, hi in zip(distinct, distinct[1:]):
            thr = (lo + hi) / 2.0
            mask = x[:, f] <= thr
            cl = np.bincount(y[mask], minlength=n_classes).astype(np.float64)
            cr = np.bincount(y[~mask], minlength=n_classes).astype(np.float64)
            nl, nr = float(mask.sum()), float((~mask).sum())
            q = (cl**2).sum() / nl + (cr**2).sum() / nr
            if q > best_q:
                best_q = q
                best = (f, thr)
    return best


def two_clouds(n=200, d=5, separation=4.0, seed=0, labels=("CC", "ONC")):
    """Two spherical Gaussian clouds with the given sigma separation."""
    rng = np.random.default_rng(seed)
    half = n // 2
    a = rng.normal(0.0, 1.0, size=(half, d))
    b = rng.normal(separation, 1.0, size=(n - half, d))
    x = np.vstack([a, b])
    y = [labels[0]] * half + [labels[1]] * (n - half)
    return x, y


def leaf_only_tree(class_index, n_classes=3, n_rows=4):
    counts = np.zeros((1, n_classes), dtype=np.int64)
    counts[0, class_index] = 1
    return Tree(
        feature=np.array([-1], dtype=np.int32),
        threshold=np.array([0.0]),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        counts=counts,
        in_bag=np.ones(n_rows, dtype=bool),
    )


class TestBestSplit:
    def test_matches_exhaustive_search_on_small_fixtures(self):
        rng = np.random.default_rng(21)
        checked = 0
        for trial in range(300):
            n = int(rng.integers(2, 13))
            p = int(rng.integers(1, 4))
            # coarse values force plenty of duplicates and exact ties
            x = np.round(rng.uniform(0, 1, size=(n, p)), 1)
            y = rng.integers(0, 3, size=n)
            got = best_split(x, y, 3)
            want = exhaustive_best_split(x, y, 3)
            assert got == want
            if want is not None:
                checked += 1
        assert checked > 100  # the comparison exercised real splits

    def test_constant_features_give_no_split(self):
        x = np.ones((6, 3))
        y = np.array([0, 1, 0, 1, 2, 0])
        assert best_split(x, y, 3) is None

    def test_pure_node_gives_no_split(self):
        x = np.arange(8.0).reshape(4, 2)
        y = np.zeros(4, dtype=np.int64)
        assert best_split(x, y, 3) is None

    def test_tie_prefers_lowest_feature_then_threshold(self):
        # identical columns: both yield the same perfect split
        col = np.array([0.0, 0.0, 1.0, 1.0])
        x = np.stack([col, col], axis=1)
        y = np.array([0, 0, 1, 1])
        assert best_split(x, y, 2) == (0, 0.5)

    def test_feature_subset_is_respected(self):
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 0, 1, 1])  # only feature 0 is informative
        assert best_split(x, y, 2, features=np.array([1])) is None
        assert best_split(x, y, 2, features=np.array([0])) == (0, 0.5)


class TestTraining:
    def test_separated_clouds_oob_error_small(self):
        x, y = two_clouds(n=200, d=5, separation=4.0, seed=3)
        model = train_forest(x, y, TrainConfig(n_trees=50, seed=7))
        assert oob_error(model, x, y) <= 0.02

    def test_training_points_memorized_by_single_tree(self):
        x, y = two_clouds(n=60, d=3, separation=8.0, seed=1)
        model = train_forest(x, y, TrainConfig(n_trees=1, seed=5))
        assert predict_class(model, x) == y

    def test_single_class_rejected(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(DegenerateTrainingError):
            train_forest(x, ["CC"] * 10)

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError):
            train_forest(np.zeros((2, 2)), ["CC", "BAD"])

    def test_same_seed_byte_identical_and_thread_independent(self, tmp_path):
        x, y = two_clouds(n=120, d=5, seed=2)
        a = train_forest(x, y, TrainConfig(n_trees=16, seed=9, n_jobs=1))
        b = train_forest(x, y, TrainConfig(n_trees=16, seed=9, n_jobs=4))
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, pa)
        save_model(b, pb)
        bytes_a, bytes_b = pa.read_bytes(), pb.read_bytes()
        # configs echo n_jobs-free payloads, so the files must match exactly
        assert bytes_a == bytes_b

    def test_different_seed_changes_model(self, tmp_path):
        x, y = two_clouds(n=120, d=5, seed=2)
        a = train_forest(x, y, TrainConfig(n_trees=8, seed=1))
        b = train_forest(x, y, TrainConfig(n_trees=8, seed=2))
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, pa)
        save_model(b, pb)
        assert pa.read_bytes() != pb.read_bytes()


class TestPrediction:
    def test_unanimous_forest(self):
        x, y = two_clouds(n=80, d=4, separation=10.0, seed=4)
        model = train_forest(x, y, TrainConfig(n_trees=10, seed=0))
        probe = np.full(4, 10.0)
        proba = predict_proba(model, probe)
        assert proba.tolist() == [0.0, 1.0]
        assert predict_class(model, probe) == "ONC"

    def test_vote_fractions(self):
        trees = tuple(
            leaf_only_tree(0) for _ in range(30)
        ) + tuple(leaf_only_tree(1) for _ in range(15)) + tuple(leaf_only_tree(2) for _ in range(5))
        model = RandomForestModel(trees, ("CC", "CCP", "ONC"), 2, 4, TrainConfig(n_trees=50))
        proba = predict_proba(model, np.zeros(2))
        assert proba.tolist() == [0.6, 0.3, 0.1]

    def test_tie_breaks_by_class_order(self):
        trees = (leaf_only_tree(1), leaf_only_tree(0))
        model = RandomForestModel(trees, ("CC", "CCP", "ONC"), 2, 4, TrainConfig(n_trees=2))
        assert predict_class(model, np.zeros(2)) == "CC"

    def test_class_equals_argmax_of_proba(self):
        x, y = two_clouds(n=100, d=5, separation=2.0, seed=6)
        model = train_forest(x, y, TrainConfig(n_trees=9, seed=3))
        probes = np.random.default_rng(1).normal(2.0, 2.0, size=(40, 5))
        proba = predict_proba(model, probes)
        for label, row in zip(predict_class(model, probes), proba):
            assert label == model.classes[int(np.argmax(row))]

    def test_adding_unanimous_tree_keeps_its_class(self):
        x, y = two_clouds(n=100, d=5, separation=2.0, seed=8)
        model = train_forest(x, y, TrainConfig(n_trees=7, seed=2))
        probes = np.random.default_rng(2).normal(1.0, 3.0, size=(60, 5))
        before = predict_class(model, probes)
        boosted = RandomForestModel(
            model.trees + (leaf_only_tree(0, n_classes=2, n_rows=100),),
            model.classes,
            model.dimension,
            model.n_rows,
            model.config,
        )
        after = predict_class(boosted, probes)
        for b, a in zip(before, after):
            if b == model.classes[0]:
                assert a == model.classes[0]

    def test_dimension_mismatch(self):
        x, y = two_clouds(n=40, d=3, seed=0)
        model = train_forest(x, y, TrainConfig(n_trees=2))
        with pytest.raises(ValueError):
            predict_class(model, np.zeros(4))


class TestOob:
    def test_shuffled_labels_near_two_thirds(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(300, 5))
        y = [("CC", "CCP", "ONC")[i] for i in rng.integers(0, 3, size=300)]
        model = train_forest(x, y, TrainConfig(n_trees=50, seed=4))
        err = oob_error(model, x, y)
        assert abs(err - 2 / 3) <= 0.10

    def test_single_tree_oob_coverage_fraction(self):
        x, y = two_clouds(n=500, d=4, separation=6.0, seed=9)
        model = train_forest(x, y, TrainConfig(n_trees=1, seed=11))
        _, counted = oob_details(model, x, y)
        assert abs(counted / 500 - (1 - 1 / 500) ** 500) <= 0.10

    def test_all_rows_in_bag_raises(self):
        x, y = two_clouds(n=30, d=3, seed=5)
        model = train_forest(x, y, TrainConfig(n_trees=2, seed=0))
        for tree in model.trees:
            tree.in_bag = np.ones(30, dtype=bool)
        with pytest.raises(InsufficientTreesError):
            oob_error(model, x, y)

    def test_wrong_row_count_rejected(self):
        x, y = two_clouds(n=40, d=3, seed=5)
        model = train_forest(x, y, TrainConfig(n_trees=2))
        with pytest.raises(ValueError):
            oob_error(model, x[:20], y[:20])


class TestSerialization:
    def test_round_trip_preserves_predictions_and_bytes(self, tmp_path):
        x, y = two_clouds(n=90, d=4, seed=13)
        model = train_forest(x, y, TrainConfig(n_trees=12, seed=21))
        p1 = tmp_path / "m.json"
        save_model(model, p1)
        back = load_model(p1)
        probes = np.random.default_rng(3).normal(2.0, 2.0, size=(25, 4))
        assert predict_class(back, probes) == predict_class(model, probes)
        assert np.array_equal(predict_proba(back, probes), predict_proba(model, probes))
        assert oob_error(back, x, y) == oob_error(model, x, y)
        p2 = tmp_path / "m2.json"
        save_model(back, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_format_guard(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "other/9"}')
        with pytest.raises(ValueError):
            load_model(p)
