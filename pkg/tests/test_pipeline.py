"""Dataset handling: splits, K-fold, SMOTE, metrics, synthetic data, CSV."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neatboost.pipeline import (DataError, Dataset, LABEL_NAMES,
                                compute_metrics, read_feature_csv, smote,
                                stratified_kfold, stratified_split,
                                synthesize_dataset, write_feature_csv)


def brute_force_metrics(y_true, y_pred, c):
    """Independent per-class TP/FP/FN oracle, plain loops."""
    tp = [0] * c
    fp = [0] * c
    fn = [0] * c
    for t, p in zip(y_true, y_pred):
        if t == p:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    prec, rec, f1, sup = [], [], [], []
    for k in range(c):
        p = tp[k] / (tp[k] + fp[k]) if tp[k] + fp[k] > 0 else 0.0
        r = tp[k] / (tp[k] + fn[k]) if tp[k] + fn[k] > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(f)
        sup.append(tp[k] + fn[k])
    n = len(y_true)
    acc = sum(tp) / n
    w = [s / n for s in sup]
    return {
        "accuracy": acc,
        "precision_weighted": sum(wi * p for wi, p in zip(w, prec)),
        "recall_weighted": sum(wi * r for wi, r in zip(w, rec)),
        "f1_weighted": sum(wi * f for wi, f in zip(w, f1)),
        "f1_macro": sum(f1) / c,
    }


class TestDataset:
    def test_validation(self):
        with pytest.raises(DataError, match="2-D"):
            Dataset(np.zeros(3), np.zeros(3, int), ["a", "b", "c"])
        with pytest.raises(DataError, match="mismatch"):
            Dataset(np.zeros((2, 4)), np.zeros(3, int), ["a", "b"])
        with pytest.raises(DataError, match="non-finite"):
            Dataset(np.array([[np.nan, 0.0]]), np.zeros(1, int), ["a"])
        with pytest.raises(DataError, match="duplicate"):
            Dataset(np.zeros((2, 4)), np.zeros(2, int), ["a", "a"])

    def test_subset_and_labeled(self):
        ds = Dataset(np.arange(8.0).reshape(4, 2), [0, 1, -1, 2],
                     ["a", "b", "c", "d"])
        assert not ds.labeled()
        sub = ds.subset(np.array([0, 3]))
        assert sub.ids == ["a", "d"]
        assert sub.labeled()
        assert np.array_equal(sub.X, [[0.0, 1.0], [6.0, 7.0]])


class TestMetrics:
    def test_hand_example(self):
        # per-class by hand: c0 TP1 FN1, c1 TP2 FP1, c2 TP1
        # F1 = (2/3, 0.8, 1.0), supports (2,2,1)
        m = compute_metrics([0, 0, 1, 1, 2], [0, 1, 1, 1, 2], 3)
        assert m.accuracy == pytest.approx(0.8, abs=1e-12)
        assert m.f1_weighted == pytest.approx(0.7867, abs=1e-4)
        assert m.f1_macro == pytest.approx(0.8222, abs=1e-4)
        assert m.precision_weighted == pytest.approx((2 + 4 / 3 + 1) / 5, abs=1e-12)
        assert m.recall_weighted == pytest.approx(0.8, abs=1e-12)
        assert not m.zero_division
        assert np.array_equal(m.confusion, [[1, 1, 0], [0, 2, 0], [0, 0, 1]])

    def test_perfect(self):
        m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
        for v in (m.accuracy, m.precision_weighted, m.recall_weighted,
                  m.f1_weighted, m.f1_macro):
            assert v == 1.0
        assert np.array_equal(np.diag(m.confusion), [1, 2, 1])

    def test_fixed_confusion_counts(self):
        # diagonal (11,24,7) over supports (13,28,10): 42/51 correct
        y_true = [0] * 13 + [1] * 28 + [2] * 10
        y_pred = ([0] * 11 + [1, 2] + [1] * 24 + [0, 0, 2, 2]
                  + [2] * 7 + [0, 1, 1])
        m = compute_metrics(y_true, y_pred, 3)
        assert m.accuracy == pytest.approx(42 / 51, abs=1e-12)
        assert np.array_equal(np.diag(m.confusion), [11, 24, 7])
        assert np.array_equal(m.confusion.sum(axis=1), [13, 28, 10])

    def test_zero_division_flagged(self):
        m = compute_metrics([0, 0, 1], [0, 0, 0], 3)
        assert m.zero_division
        assert m.precision_per_class[1] == 0.0
        assert m.recall_per_class[2] == 0.0  # class 2 absent entirely
        assert m.f1_macro == pytest.approx((0.8 + 0 + 0) / 3, abs=1e-12)

    def test_row_normalized(self):
        m = compute_metrics([0, 0, 1], [0, 1, 1], 3)
        sums = m.confusion_normalized.sum(axis=1)
        assert sums[0] == pytest.approx(1.0) and sums[1] == pytest.approx(1.0)
        assert sums[2] == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_metrics([], [], 3)
        with pytest.raises(ValueError):
            compute_metrics([0, 1], [0], 3)
        with pytest.raises(ValueError):
            compute_metrics([0, 3], [0, 0], 3)

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)),
                    min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_matches_oracle(self, pairs):
        y_true = [t for t, _ in pairs]
        y_pred = [p for _, p in pairs]
        m = compute_metrics(y_true, y_pred, 3)
        want = brute_force_metrics(y_true, y_pred, 3)
        for key, val in want.items():
            assert getattr(m, key) == pytest.approx(val, abs=1e-12)
        # weighted recall is accuracy by definition
        assert m.recall_weighted == pytest.approx(m.accuracy, abs=1e-12)


class TestStratifiedSplit:
    def test_reference_counts(self):
        y = np.repeat([0, 1, 2], [85, 182, 69])
        tr, va, te = stratified_split(y, (0.747, 0.101, 0.152), seed=4)
        assert [np.sum(y[te] == c) for c in range(3)] == [13, 28, 10]
        # largest-remainder allocation for the other two splits
        assert [np.sum(y[tr] == c) for c in range(3)] == [63, 136, 52]
        assert [np.sum(y[va] == c) for c in range(3)] == [9, 18, 7]

    def test_disjoint_exhaustive(self):
        y = np.repeat([0, 1, 2], [20, 30, 10])
        tr, va, te = stratified_split(y, (0.6, 0.2, 0.2), seed=1)
        combined = np.concatenate([tr, va, te])
        assert len(combined) == len(y)
        assert len(np.unique(combined)) == len(y)

    def test_all_train(self):
        y = np.repeat([0, 1, 2], 5)
        tr, va, te = stratified_split(y, (1.0, 0.0, 0.0), seed=0)
        assert len(tr) == len(y) and len(va) == 0 and len(te) == 0

    def test_deterministic(self):
        y = np.repeat([0, 1, 2], [20, 30, 10])
        a = stratified_split(y, (0.6, 0.2, 0.2), seed=9)
        b = stratified_split(y, (0.6, 0.2, 0.2), seed=9)
        for x, z in zip(a, b):
            assert np.array_equal(x, z)
        c = stratified_split(y, (0.6, 0.2, 0.2), seed=10)
        assert any(not np.array_equal(x, z) for x, z in zip(a, c))

    def test_class_too_small(self):
        y = np.array([0, 0, 0, 0, 1])
        with pytest.raises(DataError, match="class 1"):
            stratified_split(y, (0.5, 0.25, 0.25), seed=0)

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            stratified_split([0, 1], (0.5, 0.4, 0.2), seed=0)

    @given(st.lists(st.integers(0, 2), min_size=30, max_size=80),
           st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, labels, seed):
        y = np.array(labels + [0, 1, 2] * 4)  # every class present
        tr, va, te = stratified_split(y, (0.5, 0.25, 0.25), seed=seed)
        combined = np.sort(np.concatenate([tr, va, te]))
        assert np.array_equal(combined, np.arange(len(y)))


class TestStratifiedKfold:
    def test_divisible(self):
        y = np.repeat([0, 1, 2], 5)
        for _, val in stratified_kfold(y, 5, seed=2):
            assert [np.sum(y[val] == c) for c in range(3)] == [1, 1, 1]

    def test_partition(self):
        y = np.repeat([0, 1, 2], [9, 13, 7])
        folds = stratified_kfold(y, 4, seed=3)
        seen = np.concatenate([val for _, val in folds])
        assert np.array_equal(np.sort(seen), np.arange(len(y)))
        for tr, val in folds:
            assert len(np.intersect1d(tr, val)) == 0
            assert len(tr) + len(val) == len(y)

    def test_development_set_sizes(self):
        y = np.repeat([0, 1, 2], [63, 135, 52])
        sizes = [len(val) for _, val in stratified_kfold(y, 5, seed=0)]
        assert all(abs(s - 50) <= 1 for s in sizes)

    def test_proportions_within_one(self):
        y = np.repeat([0, 1, 2], [11, 23, 8])
        k = 4
        for _, val in stratified_kfold(y, k, seed=5):
            for c, total in zip(range(3), (11, 23, 8)):
                got = np.sum(y[val] == c)
                assert abs(got - total / k) < 1.0 + 1e-9

    def test_class_smaller_than_k(self):
        y = np.array([0] * 10 + [1] * 10 + [2] * 3)
        with pytest.raises(DataError, match="class 2"):
            stratified_kfold(y, 5, seed=0)


class TestSmote:
    def test_balances_counts(self):
        rng = np.random.default_rng(0)
        y = np.repeat([0, 1, 2], [63, 135, 52])
        X = rng.normal(size=(len(y), 4))
        Xb, yb = smote(X, y, 5, seed=1)
        assert list(np.bincount(yb)) == [135, 135, 135]
        assert np.array_equal(Xb[: len(y)], X)
        assert np.array_equal(yb[: len(y)], y)

    def test_already_balanced(self):
        X = np.arange(12.0).reshape(6, 2)
        y = np.array([0, 0, 1, 1, 2, 2])
        Xb, yb = smote(X, y, 3, seed=0)
        assert np.array_equal(Xb, X) and np.array_equal(yb, y)

    def test_two_point_segment(self):
        p, q = np.array([0.0, 0.0]), np.array([2.0, 4.0])
        X = np.vstack([p, q, np.random.default_rng(3).normal(size=(9, 2))])
        y = np.array([0, 0] + [1] * 9)
        Xb, yb = smote(X, y, 5, seed=7)
        synth = Xb[11:]
        assert np.all(yb[11:] == 0)
        # every synthetic point on segment [p,q]: x = u*q for u in [0,1]
        u = synth[:, 1] / 4.0
        assert np.all((u >= 0) & (u <= 1))
        assert np.allclose(synth[:, 0], 2.0 * u, atol=1e-12)

    def test_singleton_class(self):
        X = np.zeros((4, 2))
        X[3] = 9.0
        y = np.array([0, 0, 0, 1])
        with pytest.raises(DataError, match="single sample"):
            smote(X, y, 5, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 3))
        y = np.array([0] * 20 + [1] * 10)
        a = smote(X, y, 4, seed=11)
        b = smote(X, y, 4, seed=11)
        assert np.array_equal(a[0], b[0])


class TestSynthesize:
    def test_shapes_and_labels(self):
        ds = synthesize_dataset(50, 2.0, seed=3)
        assert ds.X.shape == (150, 16)
        assert list(np.bincount(ds.y)) == [50, 50, 50]
        assert len(set(ds.ids)) == 150

    def test_zero_separation_means_coincide(self):
        ds = synthesize_dataset(2000, 0.0, seed=1)
        means = [ds.X[ds.y == c].mean(axis=0) for c in range(3)]
        spread = max(np.abs(means[0] - means[1]).max(),
                     np.abs(means[0] - means[2]).max())
        noise = ds.X.std(axis=0).max() / np.sqrt(2000)
        assert spread < 6 * noise

    def test_separable_for_shallow_tree(self):
        # separation 6: three pure axis-aligned splits suffice
        ds = synthesize_dataset(100, 6.0, seed=5)
        acc = _depth3_tree_accuracy(ds.X, ds.y)
        assert acc > 0.95

    def test_fraction_columns_clipped(self):
        ds = synthesize_dataset(300, 8.0, seed=2)
        for col in (4, 6, 7, 8, 9, 10, 15):
            assert ds.X[:, col].min() >= 0.0
            assert ds.X[:, col].max() <= 1.0

    def test_deterministic(self):
        a = synthesize_dataset(20, 1.5, seed=42)
        b = synthesize_dataset(20, 1.5, seed=42)
        assert np.array_equal(a.X, b.X) and a.ids == b.ids


def _depth3_tree_accuracy(X, y):
    """Tiny exhaustive-threshold decision tree, depth 3, training accuracy."""

    def best_split(idx):
        best = (0.0, None, None)
        base = _gini(y[idx])
        for f in range(X.shape[1]):
            vals = np.unique(X[idx, f])
            for t in (vals[:-1] + vals[1:]) / 2:
                left = idx[X[idx, f] < t]
                right = idx[X[idx, f] >= t]
                if len(left) == 0 or len(right) == 0:
                    continue
                g = base - (len(left) * _gini(y[left])
                            + len(right) * _gini(y[right])) / len(idx)
                if g > best[0]:
                    best = (g, f, t)
        return best

    def grow(idx, depth):
        classes, counts = np.unique(y[idx], return_counts=True)
        if depth == 0 or len(classes) == 1:
            return int(classes[np.argmax(counts)])
        gain, f, t = best_split(idx)
        if f is None:
            return int(classes[np.argmax(counts)])
        return (f, t, grow(idx[X[idx, f] < t], depth - 1),
                grow(idx[X[idx, f] >= t], depth - 1))

    def apply(node, row):
        while isinstance(node, tuple):
            f, t, l, r = node
            node = l if row[f] < t else r
        return node

    tree = grow(np.arange(len(y)), 3)
    pred = np.array([apply(tree, row) for row in X])
    return float((pred == y).mean())


def _gini(labels):
    _, counts = np.unique(labels, return_counts=True)
    p = counts / len(labels)
    return float(1.0 - (p ** 2).sum())


class TestCsvRoundtrip:
    def test_write_read(self, tmp_path):
        ds = synthesize_dataset(10, 2.0, seed=8)
        path = tmp_path / "f.csv"
        write_feature_csv(path, ds)
        back = read_feature_csv(path)
        assert np.array_equal(back.X, ds.X)  # repr round-trips exactly
        assert np.array_equal(back.y, ds.y)
        assert back.ids == ds.ids

    def test_label_names(self, tmp_path):
        ds = synthesize_dataset(2, 1.0, seed=0)
        path = tmp_path / "f.csv"
        write_feature_csv(path, ds)
        text = path.read_text()
        for name in LABEL_NAMES:
            assert f",{name}," in text

    def test_unlabeled(self, tmp_path):
        ds = Dataset(np.ones((2, 16)), [-1, 0], ["a", "b"])
        path = tmp_path / "u.csv"
        write_feature_csv(path, ds)
        with pytest.raises(DataError, match="label"):
            read_feature_csv(path)
        back = read_feature_csv(path, allow_unlabeled=True)
        assert list(back.y) == [-1, 0]

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,label,f01\nx,normal,1.0\n")
        with pytest.raises(DataError, match="header"):
            read_feature_csv(path)

    def test_bad_label(self, tmp_path):
        ds = synthesize_dataset(2, 1.0, seed=0)
        path = tmp_path / "f.csv"
        write_feature_csv(path, ds)
        text = path.read_text().replace("normal", "norml", 1)
        path.write_text(text)
        with pytest.raises(DataError, match="label"):
            read_feature_csv(path)
