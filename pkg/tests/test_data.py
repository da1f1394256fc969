import gzip

import numpy as np
import pytest

from ffgoodness.data import (Dataset, IdxFormatError, load_idx, standardize,
                             stratified_subset, synthetic_two_gaussians,
                             write_idx_images, write_idx_labels)
from ffgoodness.rng import stream


def make_idx_pair(tmp_path, images, labels, rows, cols, gz=False):
    img_path = tmp_path / ("images.idx3-ubyte" + (".gz" if gz else ""))
    lab_path = tmp_path / ("labels.idx1-ubyte" + (".gz" if gz else ""))
    write_idx_images(tmp_path / "tmp_img", images, rows, cols)
    write_idx_labels(tmp_path / "tmp_lab", labels)
    for src, dst in ((tmp_path / "tmp_img", img_path), (tmp_path / "tmp_lab", lab_path)):
        blob = src.read_bytes()
        dst.write_bytes(gzip.compress(blob) if gz else blob)
    return img_path, lab_path


class TestIdxRoundTrip:
    def test_two_image_round_trip(self, tmp_path):
        pixels = np.array([[0, 255, 7, 13], [1, 2, 3, 4]], dtype=np.uint8)
        labels = np.array([1, 0], dtype=np.uint8)
        img, lab = make_idx_pair(tmp_path, pixels, labels, 2, 2)
        ds = load_idx(img, lab)
        assert ds.features.shape == (2, 4)
        assert np.array_equal(ds.features.astype(np.uint8), pixels)
        assert ds.labels.tolist() == [1, 0]

    def test_write_read_write_is_byte_identical(self, tmp_path):
        rng = stream(0, "shuffle")
        pixels = rng.integers(0, 256, size=(5, 9), dtype=np.uint8)
        labels = rng.integers(0, 10, size=5).astype(np.uint8)
        img, lab = make_idx_pair(tmp_path, pixels, labels, 3, 3)
        ds = load_idx(img, lab)
        write_idx_images(tmp_path / "img2", ds.features.astype(np.uint8), 3, 3)
        write_idx_labels(tmp_path / "lab2", ds.labels.astype(np.uint8))
        assert (tmp_path / "img2").read_bytes() == img.read_bytes()
        assert (tmp_path / "lab2").read_bytes() == lab.read_bytes()

    def test_gzip_transparent(self, tmp_path):
        pixels = np.arange(8, dtype=np.uint8).reshape(2, 4)
        labels = np.array([3, 9], dtype=np.uint8)
        img, lab = make_idx_pair(tmp_path, pixels, labels, 2, 2, gz=True)
        ds = load_idx(img, lab)
        assert np.array_equal(ds.features.astype(np.uint8), pixels)
        assert ds.num_classes == 10

    def test_label_nine_maps_to_class_nine(self, tmp_path):
        pixels = np.zeros((1, 4), dtype=np.uint8)
        img, lab = make_idx_pair(tmp_path, pixels, np.array([9], dtype=np.uint8), 2, 2)
        ds = load_idx(img, lab, num_classes=10)
        assert ds.labels[0] == 9


class TestIdxErrors:
    def test_bad_image_magic(self, tmp_path):
        img, lab = make_idx_pair(tmp_path, np.zeros((1, 4), np.uint8),
                                 np.zeros(1, np.uint8), 2, 2)
        blob = bytearray(img.read_bytes())
        blob[3] = 4  # 2051 -> 2052
        img.write_bytes(bytes(blob))
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx(img, lab)

    def test_truncated_payload(self, tmp_path):
        img, lab = make_idx_pair(tmp_path, np.zeros((2, 4), np.uint8),
                                 np.zeros(2, np.uint8), 2, 2)
        img.write_bytes(img.read_bytes()[:-3])
        with pytest.raises(IdxFormatError, match="payload"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, _ = make_idx_pair(tmp_path, np.zeros((2, 4), np.uint8),
                               np.zeros(2, np.uint8), 2, 2)
        write_idx_labels(tmp_path / "short", np.zeros(1, np.uint8))
        with pytest.raises(IdxFormatError, match="count mismatch"):
            load_idx(img, tmp_path / "short")

    def test_truncated_header(self, tmp_path):
        bad = tmp_path / "bad"
        bad.write_bytes(b"\x00\x00")
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(bad, bad)


class TestStandardize:
    def _ds(self, seed=0, n=50, d=12):
        feats = stream(seed, "shuffle").uniform(0, 255, size=(n, d))
        labels = stream(seed, "subset").integers(0, 3, size=n)
        return Dataset(feats, labels, 3)

    def test_train_statistics(self):
        out = standardize(self._ds())
        assert abs(out.features.mean()) <= 1e-9
        assert abs(out.features.std() - 1.0) <= 1e-6

    def test_constant_rejected(self):
        ds = Dataset(np.full((4, 3), 7.0), np.zeros(4, dtype=int), 2)
        with pytest.raises(ValueError):
            standardize(ds)

    def test_test_split_reuses_train_statistics(self):
        train = self._ds(seed=1)
        test = self._ds(seed=2)
        out = standardize(test, stats_from=train)
        # test statistics generally differ from 0/1 under train stats
        assert abs(out.features.mean()) > 1e-6

    def test_idempotent_with_own_statistics(self):
        once = standardize(self._ds(seed=3))
        twice = standardize(once)
        assert np.max(np.abs(twice.features - once.features)) <= 1e-12

    def test_per_pixel_mode(self):
        out = standardize(self._ds(seed=4), per_pixel=True)
        assert np.max(np.abs(out.features.mean(axis=0))) <= 1e-9
        assert np.max(np.abs(out.features.std(axis=0) - 1.0)) <= 1e-6


class TestStratifiedSubset:
    def _balanced(self, per_class=40, C=10, d=5):
        feats = stream(7, "shuffle").standard_normal((per_class * C, d))
        labels = np.repeat(np.arange(C), per_class)
        return Dataset(feats, labels, C)

    def test_balanced_quotas(self):
        ds = self._balanced()
        sub = stratified_subset(ds, 100, stream(1, "subset"))
        assert sub.n == 100
        assert np.bincount(sub.labels, minlength=10).tolist() == [10] * 10

    def test_full_size_is_permutation(self):
        ds = self._balanced(per_class=5, C=4)
        sub = stratified_subset(ds, 20, stream(2, "subset"))
        assert sorted(map(tuple, sub.features)) == sorted(map(tuple, ds.features))

    def test_deterministic(self):
        ds = self._balanced()
        a = stratified_subset(ds, 60, stream(3, "subset"))
        b = stratified_subset(ds, 60, stream(3, "subset"))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_proportions_within_one(self):
        feats = stream(8, "shuffle").standard_normal((100, 3))
        labels = np.concatenate([np.zeros(70, int), np.ones(30, int)])
        ds = Dataset(feats, labels, 2)
        sub = stratified_subset(ds, 10, stream(4, "subset"))
        counts = np.bincount(sub.labels, minlength=2)
        assert abs(counts[0] - 7) <= 1 and abs(counts[1] - 3) <= 1

    def test_bounds(self):
        ds = self._balanced(per_class=5, C=4)
        with pytest.raises(ValueError):
            stratified_subset(ds, 21, stream(0, "subset"))
        with pytest.raises(ValueError):
            stratified_subset(ds, 3, stream(0, "subset"))


class TestSyntheticTwoGaussians:
    def test_separated_classes_are_linearly_separable(self):
        ds = synthetic_two_gaussians(500, 8, 10.0, stream(42, "synthetic"))
        # closed-form Bayes classifier: sign of the first coordinate
        preds = (ds.features[:, 0] > 0).astype(int)
        assert np.mean(preds == ds.labels) >= 0.99

    def test_zero_separation_indistinguishable(self):
        ds = synthetic_two_gaussians(500, 8, 0.0, stream(5, "synthetic"))
        preds = (ds.features[:, 0] > 0).astype(int)
        assert 0.4 <= np.mean(preds == ds.labels) <= 0.6

    def test_deterministic(self):
        a = synthetic_two_gaussians(50, 4, 3.0, stream(6, "synthetic"))
        b = synthetic_two_gaussians(50, 4, 3.0, stream(6, "synthetic"))
        assert np.array_equal(a.features, b.features)

    def test_dimension_validated(self):
        with pytest.raises(ValueError):
            synthetic_two_gaussians(10, 1, 1.0, stream(0, "synthetic"))


class TestDatasetInvariants:
    def test_labels_must_be_in_range(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)

    def test_features_must_be_finite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.inf, 0.0]]), np.array([0]), 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2)
