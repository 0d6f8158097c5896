import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcrnet.data import (
    BadMagicError,
    DcrfError,
    FeatureDataset,
    LabelRangeError,
    LongTailSpec,
    TruncatedFileError,
    VersionMismatchError,
    class_balanced_sampler,
    generate_longtail,
    load_features,
    longtail_counts,
    read_features,
    read_features_csv,
    uniform_sampler,
    write_features,
)


def toy(counts, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(counts)), counts)
    return FeatureDataset(rng.standard_normal((labels.size, dim)), labels, len(counts))


class TestFeatureDataset:
    def test_counts_and_immutability(self):
        ds = FeatureDataset(np.zeros((5, 3)), [0, 1, 1, 2, 2], 4)
        assert ds.class_counts.tolist() == [1, 2, 2, 0]
        assert len(ds) == 5 and ds.dim == 3
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_rejects_bad_labels_and_values(self):
        with pytest.raises(LabelRangeError):
            FeatureDataset(np.zeros((2, 2)), [0, 2], 2)
        with pytest.raises(ValueError):
            FeatureDataset(np.array([[0.0, np.nan]]), [0], 1)
        with pytest.raises(ValueError):
            FeatureDataset(np.zeros((2, 2)), [0], 1)

    def test_input_arrays_are_copied(self):
        x = np.zeros((2, 2))
        ds = FeatureDataset(x, [0, 0], 1)
        x[0, 0] = 5.0
        assert ds.features[0, 0] == 0.0


class TestGenerator:
    def test_near_balanced_counts_and_no_drift(self):
        spec = LongTailSpec(num_classes=2, samples_max=10, imbalance_factor=1.0001, drift_strength=0.0,
                            test_per_class=2000, cluster_spread=0.1)
        train, test = generate_longtail(spec)
        assert train.class_counts.tolist() == [10, 10]
        # equal test and train means: test prototypes sit on the train generating means up to noise
        big = LongTailSpec(num_classes=2, samples_max=2000, imbalance_factor=1.0001, cluster_spread=0.1,
                           test_per_class=2000)
        tr, te = generate_longtail(big)
        for k in range(2):
            gap = np.linalg.norm(tr.features[tr.labels == k].mean(0) - te.features[te.labels == k].mean(0))
            assert gap < 6 * 0.1 * np.sqrt(2 * big.dim / 2000)

    def test_exponential_counts(self):
        assert longtail_counts(3, 100, 100).tolist() == [100, 10, 1]
        spec = LongTailSpec(num_classes=3, samples_max=100, imbalance_factor=100)
        train, test = generate_longtail(spec)
        assert train.class_counts.tolist() == [100, 10, 1]
        assert test.class_counts.tolist() == [50, 50, 50]

    def test_rounding_is_half_up_with_floor_one(self):
        # 10 * 4 ** -0.5 = 5.0 exactly, 10 * 4 ** -1 = 2.5 rounds to 3
        assert longtail_counts(3, 10, 4).tolist() == [10, 5, 3]
        assert longtail_counts(4, 5, 1000).min() == 1

    def test_drifted_tail_test_prototypes_move_toward_head(self):
        spec = LongTailSpec(num_classes=20, samples_max=500, imbalance_factor=100, drift_strength=0.5, seed=7)
        train, test = generate_longtail(spec)
        counts = train.class_counts
        head = np.flatnonzero(counts > 100)
        tail = np.flatnonzero(counts <= 100)
        proto_tr = np.array([train.features[train.labels == k].mean(0) for k in range(20)])
        proto_te = np.array([test.features[test.labels == k].mean(0) for k in range(20)])
        closer = 0
        for t in tail:
            # near-ties in cosine make the generator's drift target ambiguous from noisy
            # train prototypes, so compare distances to the closest head prototype instead
            d_test = np.linalg.norm(proto_tr[head] - proto_te[t], axis=1).min()
            d_train = np.linalg.norm(proto_tr[head] - proto_tr[t], axis=1).min()
            closer += d_test < d_train
        assert closer == tail.size

    @pytest.mark.parametrize("kw", [
        dict(num_classes=1, samples_max=10, imbalance_factor=2),
        dict(num_classes=3, samples_max=10, imbalance_factor=1.0),
        dict(num_classes=30, samples_max=10, imbalance_factor=2),
        dict(num_classes=3, samples_max=10, imbalance_factor=2, drift_strength=1.5),
    ])
    def test_invalid_specs_rejected(self, kw):
        with pytest.raises(ValueError):
            generate_longtail(LongTailSpec(**kw))

    def test_seeded(self):
        spec = LongTailSpec(num_classes=5, samples_max=50, imbalance_factor=10, seed=3)
        a, b = generate_longtail(spec), generate_longtail(spec)
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].features, b[1].features)


class TestDcrf:
    def test_round_trip_3x2(self, tmp_path):
        ds = FeatureDataset(np.array([[1.5, -2.0], [0.0, 3.25], [-0.0, 7.0]], dtype=np.float32), [0, 2, 1], 3)
        write_features(ds, tmp_path / "a.dcrf")
        back = read_features(tmp_path / "a.dcrf")
        assert back.num_classes == 3
        assert np.array_equal(back.labels, ds.labels)
        assert back.features.tobytes() == ds.features.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(0, 6), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
    def test_round_trip_bit_exact(self, tmp_path_factory, x):
        labels = np.arange(x.shape[0]) % 3
        ds = FeatureDataset(x, labels, 3)
        path = tmp_path_factory.mktemp("rt") / "x.dcrf"
        write_features(ds, path)
        back = read_features(path)
        assert back.features.tobytes() == x.tobytes()
        assert np.array_equal(back.labels, labels)

    def test_layout(self, tmp_path):
        ds = FeatureDataset(np.array([[1.0, 2.0]], dtype=np.float32), [1], 2)
        write_features(ds, tmp_path / "a.dcrf")
        blob = (tmp_path / "a.dcrf").read_bytes()
        assert blob[:4] == b"DCRF"
        assert struct.unpack_from("<IQII", blob, 4) == (1, 1, 2, 2)
        assert struct.unpack_from("<I2f", blob, 24) == (1, 1.0, 2.0)
        assert len(blob) == 24 + 4 + 8

    def _valid(self, tmp_path, n=5):
        ds = FeatureDataset(np.ones((n, 2), dtype=np.float32), np.zeros(n, dtype=int), 2)
        p = tmp_path / "v.dcrf"
        write_features(ds, p)
        return p, bytearray(p.read_bytes())

    def test_bad_magic(self, tmp_path):
        p, blob = self._valid(tmp_path)
        blob[:4] = b"XXXX"
        p.write_bytes(blob)
        with pytest.raises(BadMagicError):
            read_features(p)

    def test_version_mismatch(self, tmp_path):
        p, blob = self._valid(tmp_path)
        blob[4:8] = struct.pack("<I", 2)
        p.write_bytes(blob)
        with pytest.raises(VersionMismatchError):
            read_features(p)

    def test_truncated(self, tmp_path):
        p, blob = self._valid(tmp_path, n=5)
        # header says N=5 but only four feature rows follow
        p.write_bytes(blob[:-8])
        with pytest.raises(TruncatedFileError):
            read_features(p)
        p.write_bytes(blob[:10])
        with pytest.raises(TruncatedFileError):
            read_features(p)

    def test_label_out_of_range(self, tmp_path):
        p, blob = self._valid(tmp_path)
        blob[24:28] = struct.pack("<I", 2)
        p.write_bytes(blob)
        with pytest.raises(LabelRangeError):
            read_features(p)

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, VersionMismatchError, TruncatedFileError, LabelRangeError}
        assert len(kinds) == 4 and all(issubclass(k, DcrfError) for k in kinds)

    def test_trailing_bytes(self, tmp_path):
        p, blob = self._valid(tmp_path)
        p.write_bytes(bytes(blob) + b"\0")
        with pytest.raises(DcrfError):
            read_features(p)


class TestCsv:
    def test_import(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("label,f0,f1\n0,1.5,2\n2,-1,0.25\n")
        ds = load_features(p)
        assert ds.num_classes == 3
        assert ds.labels.tolist() == [0, 2]
        assert np.allclose(ds.features, [[1.5, 2], [-1, 0.25]])

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("y,f0\n0,1\n")
        with pytest.raises(ValueError):
            read_features_csv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("label,f0,f1\n0,1\n")
        with pytest.raises(ValueError):
            read_features_csv(p)


class TestUniformSampler:
    def test_single_batch_epoch(self):
        ds = toy([2, 2])
        b = next(uniform_sampler(ds, 4, seed=0))
        assert sorted(b.indices.tolist()) == [0, 1, 2, 3]
        assert np.array_equal(b.features, ds.features[b.indices])

    def test_epoch_class_occurrences(self):
        ds = toy([900, 100])
        s = uniform_sampler(ds, 64, seed=1)
        idx = np.concatenate([next(s).indices for _ in range(s.batches_per_epoch)])
        assert np.sum(ds.labels[idx] == 0) == 900

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2**32))
    def test_epoch_is_permutation(self, n, b, seed):
        b = min(b, n)
        ds = FeatureDataset(np.zeros((n, 1)), np.zeros(n, dtype=int), 1)
        s = uniform_sampler(ds, b, seed)
        for _ in range(2):
            idx = np.concatenate([next(s).indices for _ in range(s.batches_per_epoch)])
            assert sorted(idx.tolist()) == list(range(n))

    def test_seeded(self):
        ds = toy([30, 20])
        a, b = uniform_sampler(ds, 7, seed=5), uniform_sampler(ds, 7, seed=5)
        for _ in range(20):
            assert np.array_equal(next(a).indices, next(b).indices)

    def test_rejects_bad_batch_size(self):
        ds = toy([3])
        with pytest.raises(ValueError):
            uniform_sampler(ds, 0)
        with pytest.raises(ValueError):
            uniform_sampler(ds, 4)


class TestClassBalancedSampler:
    def test_class_frequency(self):
        ds = toy([900, 100])
        s = class_balanced_sampler(ds, 1000, seed=2)
        labels = np.concatenate([next(s).labels for _ in range(100)])
        assert abs(np.mean(labels == 0) - 0.5) <= 0.01

    def test_chi_square_uniform_over_classes(self):
        from scipy.stats import chisquare

        ds = toy([500, 120, 40, 9, 3])
        s = class_balanced_sampler(ds, 500, seed=3)
        labels = np.concatenate([next(s).labels for _ in range(200)])
        assert chisquare(np.bincount(labels, minlength=5)).pvalue > 0.001

    def test_within_class_uniform(self):
        ds = toy([3, 1])
        s = class_balanced_sampler(ds, 4, seed=4)
        idx = np.concatenate([next(s).indices for _ in range(15000)])
        within = np.bincount(idx[ds.labels[idx] == 0], minlength=3)[:3]
        assert np.all(np.abs(within / within.sum() - 1 / 3) < 0.01)

    def test_single_class(self):
        ds = toy([5])
        b = next(class_balanced_sampler(ds, 5, seed=0))
        assert np.all(b.labels == 0)

    def test_seeded(self):
        ds = toy([30, 5])
        a, b = class_balanced_sampler(ds, 8, seed=9), class_balanced_sampler(ds, 8, seed=9)
        for _ in range(10):
            assert np.array_equal(next(a).indices, next(b).indices)

    def test_empty_class_rejected(self):
        ds = FeatureDataset(np.zeros((3, 1)), [0, 0, 2], 3)
        with pytest.raises(ValueError):
            class_balanced_sampler(ds, 2)
