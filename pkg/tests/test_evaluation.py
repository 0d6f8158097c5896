import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcrnet.baselines import train_crt, train_linear
from dcrnet.classifier import DcrModel, MultiProxyClassifier, zeros_classifier
from dcrnet.config import TrainConfig
from dcrnet.data import FeatureDataset, LongTailSpec, generate_longtail
from dcrnet.evaluation import accuracy_report, drift_report, evaluate, predict, shot_splits
from dcrnet.stats import build_class_stats


def linear_model(w, head_mask=None):
    """Model whose balanced branch is the plain linear classifier ``w`` of shape (K, D)."""
    K, D = w.shape
    mask = np.ones(K, dtype=bool) if head_mask is None else head_mask
    u = MultiProxyClassifier(w[:, None, :].copy(), mask)
    return DcrModel(u, zeros_classifier(D, K, 1, mask), None)


class TestPredict:
    def test_linear_reduction(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((5, 3))
        f = rng.standard_normal((20, 3))
        assert np.array_equal(predict(linear_model(w), f), np.argmax(f @ w.T, axis=1))

    def test_unique_max(self):
        w = np.eye(6)[:, :6]
        f = np.array([0.1, 0.2, 0.3, 0.9, 0.0, 0.5])
        assert predict(linear_model(w), f) == 3

    def test_tie_goes_to_lowest_index(self):
        w = np.eye(5)
        f = np.array([0.0, 0.7, 0.2, 0.1, 0.7])
        assert predict(linear_model(w), f) == 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((4, 3))
        f = rng.standard_normal((10, 3))
        assert np.array_equal(predict(linear_model(w), f), predict(linear_model(c * w), f))


class TestSplits:
    def test_thresholds(self):
        s = shot_splits([500, 50, 5])
        assert s["many"].tolist() == [0] and s["medium"].tolist() == [1] and s["few"].tolist() == [2]

    def test_boundaries(self):
        s = shot_splits([101, 100, 20, 19])
        assert s["many"].tolist() == [0] and s["medium"].tolist() == [1, 2] and s["few"].tolist() == [3]


class TestAccuracyReport:
    def test_perfect(self):
        labels = np.repeat(np.arange(3), 4)
        r = accuracy_report(labels, labels, [500, 50, 5])
        assert r.overall == 1.0 and all(v == 1.0 for v in r.splits.values())
        assert np.all(r.per_class == 1.0)

    def test_random_predictions_near_chance(self):
        rng = np.random.default_rng(1)
        K, n = 10, 500
        labels = np.repeat(np.arange(K), n)
        preds = rng.integers(0, K, labels.size)
        r = accuracy_report(labels, preds, np.full(K, 200))
        sigma = np.sqrt(0.1 * 0.9 / labels.size)
        assert abs(r.overall - 0.1) <= 3 * sigma

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32))
    def test_splits_recombine_to_overall(self, seed):
        rng = np.random.default_rng(seed)
        K = 8
        counts = rng.integers(1, 300, K)
        labels = rng.integers(0, K, 200)
        preds = np.where(rng.random(200) < 0.6, labels, rng.integers(0, K, 200))
        r = accuracy_report(labels, preds, counts)
        splits = shot_splits(counts)
        total = sum(r.splits[s] * r.class_support[c].sum() for s, c in splits.items() if r.splits[s] is not None)
        assert total / labels.size == pytest.approx(r.overall, abs=1e-12)
        supported = r.class_support > 0
        weighted = np.sum(r.per_class[supported] * r.class_support[supported]) / labels.size
        assert weighted == pytest.approx(r.overall, abs=1e-12)
        assert np.all((r.per_class[supported] >= 0) & (r.per_class[supported] <= 1))

    def test_class_missing_from_training(self):
        with pytest.raises(ValueError):
            accuracy_report([0, 1, 2], [0, 1, 2], [10, 10, 0])

    def test_empty_split_is_none(self):
        r = accuracy_report([0, 1], [0, 1], [500, 200])
        assert r.splits["few"] is None and r.split_sizes["few"] == 0
        assert json.loads(r.to_json())["few"] is None

    def test_csv(self, tmp_path):
        r = accuracy_report([0, 0, 1, 2], [0, 1, 1, 2], [500, 50, 5])
        r.write_csv(tmp_path / "c.csv", [500, 50, 5])
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["class", "train_count", "test_support", "correct", "accuracy"]
        assert rows[1] == ["0", "500", "2", "1", "0.500000"]


def test_evaluate_label_space_mismatch():
    ds = FeatureDataset(np.zeros((2, 2)), [0, 1], 2)
    model = linear_model(np.eye(3, 2))
    with pytest.raises(ValueError):
        evaluate(model, ds, [10, 10, 10])


@pytest.fixture(scope="module")
def drifted():
    train, test = generate_longtail(LongTailSpec(num_classes=20, samples_max=500, imbalance_factor=100,
                                                 drift_strength=0.5, seed=7))
    return train, test, build_class_stats(train, TrainConfig())


class TestDriftReport:
    def test_identical_inputs_give_zero(self):
        rng = np.random.default_rng(2)
        labels = np.repeat(np.arange(3), [150, 20, 5])
        ds = FeatureDataset(np.abs(rng.standard_normal((175, 4))) + 0.1, labels, 3)
        stats = build_class_stats(ds)
        r = drift_report(ds, ds, stats, compensated=False)
        assert np.allclose(r.prototype_shift, 0, atol=1e-6)
        assert np.allclose(r.test_to_train, 0, atol=1e-6)

    def test_distances_non_negative_and_counts_bounded(self, drifted):
        train, test, stats = drifted
        r = drift_report(train, test, stats)
        for arr in (r.prototype_shift, r.train_to_head, r.test_to_head, r.test_to_train, r.test_to_compensated):
            assert np.all(arr >= 0)
        assert np.all((r.distinct_nearest_heads >= 1) & (r.distinct_nearest_heads <= stats.head_classes.size))

    def test_tail_test_features_closer_to_head(self, drifted):
        train, test, stats = drifted
        r = drift_report(train, test, stats)
        assert r.test_to_head.mean() < r.train_to_head.mean()

    def test_compensation_brings_train_closer(self, drifted):
        train, test, stats = drifted
        r = drift_report(train, test, stats)
        tail = r.tail_classes
        assert np.all(r.test_to_compensated[tail] <= r.test_to_train[tail])
        head = stats.head_classes
        assert np.array_equal(r.test_to_compensated[head], r.test_to_train[head])

    def test_csvs(self, drifted, tmp_path):
        train, test, stats = drifted
        paths = drift_report(train, test, stats).write_csvs(tmp_path)
        names = sorted(p.name for p in paths)
        assert names == ["nearest_head_count.csv", "prototype_shift.csv", "tail_to_head.csv", "test_to_train.csv"]
        rows = list(csv.reader(open(tmp_path / "test_to_train.csv")))
        assert rows[0] == ["class", "train_count", "original_distance", "compensated_distance"]
        assert len(rows) == 21

    def test_dim_mismatch(self, drifted):
        train, _, stats = drifted
        other = FeatureDataset(np.zeros((1, 3)), [0], 20)
        with pytest.raises(ValueError):
            drift_report(train, other, stats)


class TestBaselines:
    def test_crt_model_is_linear_with_zero_residual(self):
        train, _ = generate_longtail(LongTailSpec(num_classes=6, samples_max=200, imbalance_factor=20, seed=1))
        model = train_crt(train, TrainConfig(epochs=2))
        assert model.uniform.num_proxies == 1
        assert np.all(model.residual.weights == 0)

    def test_unknown_sampling(self):
        train, _ = generate_longtail(LongTailSpec(num_classes=6, samples_max=200, imbalance_factor=20, seed=1))
        with pytest.raises(ValueError):
            train_linear(train, TrainConfig(epochs=1), sampling="other")
