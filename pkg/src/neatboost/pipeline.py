"""Dataset handling: splits, K-fold, SMOTE, metrics, synthetic data.

Labels are integers 0 = normal, 1 = wb (woody breast), 2 = sm (spaghetti
meat) throughout; CSV files carry the lowercase names. All operations take
an integer seed and are pure given that seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .imaging import FEATURE_NAMES, N_FEATURES

LABEL_NAMES = ("normal", "wb", "sm")
LABEL_TO_INT = {name: i for i, name in enumerate(LABEL_NAMES)}
N_CLASSES = 3


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class Dataset:
    """Feature matrix with integer labels and per-row identifiers.

    y may contain -1 for unlabeled rows (prediction inputs); every other
    operation requires labels in [0, 3).
    """

    X: np.ndarray
    y: np.ndarray
    ids: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        if len(self.X) != len(self.y) or len(self.X) != len(self.ids):
            raise DataError("X, y, ids length mismatch")
        if not np.all(np.isfinite(self.X)):
            raise DataError("non-finite feature values")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids")

    @property
    def n(self) -> int:
        return len(self.y)

    def labeled(self) -> bool:
        return bool(np.all(self.y >= 0))

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], [self.ids[i] for i in idx])


# ---------------------------------------------------------------------------
# splitting


def stratified_split(y, fractions=(0.747, 0.101, 0.152), seed=0):
    """Per-class proportional allocation with largest-remainder rounding.

    Returns (train_idx, val_idx, test_idx), disjoint and exhaustive,
    each sorted ascending. Within each class, membership is decided by a
    seeded shuffle; leftover units after flooring go to the splits with
    the largest fractional remainders (ties toward the earlier split).
    """
    y = np.asarray(y, dtype=np.int64)
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be nonnegative and sum to 1")
    rng = np.random.default_rng(seed)
    out = [[], [], []]
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        n_c = len(members)
        quotas = n_c * fractions
        counts = np.floor(quotas).astype(np.int64)
        remainders = quotas - counts
        leftover = n_c - counts.sum()
        for s in sorted(range(3), key=lambda s: (-remainders[s], s))[:leftover]:
            counts[s] += 1
        for s in range(3):
            if fractions[s] > 0 and counts[s] == 0:
                raise DataError(
                    f"class {int(c)} too small for requested split fractions"
                )
        perm = rng.permutation(n_c)
        shuffled = members[perm]
        stops = np.cumsum(counts)
        out[0].append(shuffled[: stops[0]])
        out[1].append(shuffled[stops[0]: stops[1]])
        out[2].append(shuffled[stops[1]: stops[2]])
    return tuple(np.sort(np.concatenate(part)).astype(np.int64) for part in out)


def stratified_kfold(y, k, seed=0):
    """K (train_idx, val_idx) pairs; validation folds partition the indices.

    Per class, shuffled indices are dealt round-robin to folds, so every
    fold's class proportions are within one sample of the global ones.
    """
    y = np.asarray(y, dtype=np.int64)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            raise DataError(
                f"class {int(c)} has {len(members)} samples, fewer than k={k}"
            )
        shuffled = members[rng.permutation(len(members))]
        for f in range(k):
            folds[f].append(shuffled[f::k])
    pairs = []
    all_idx = np.arange(len(y))
    for f in range(k):
        val = np.sort(np.concatenate(folds[f]))
        mask = np.ones(len(y), dtype=bool)
        mask[val] = False
        pairs.append((all_idx[mask], val.astype(np.int64)))
    return pairs


# ---------------------------------------------------------------------------
# SMOTE


def smote(X, y, k_neighbors=5, seed=0):
    """Oversample minority classes to the majority count by interpolation.

    Synthetic point = x + u * (x_nn - x) with u ~ Uniform(0,1) and x_nn one
    of the k same-class Euclidean nearest neighbors (k is capped at
    class size - 1). Original rows come first, in their input order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    rng = np.random.default_rng(seed)
    counts = np.bincount(y)
    target = counts.max()
    new_X, new_y = [X], [y]
    for c in range(len(counts)):
        deficit = target - counts[c]
        if deficit == 0 or counts[c] == 0:
            continue
        if counts[c] == 1:
            raise DataError(f"class {c} has a single sample, cannot interpolate")
        Xc = X[y == c]
        k_eff = min(k_neighbors, len(Xc) - 1)
        d2 = ((Xc[:, None, :] - Xc[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        synth = np.empty((deficit, X.shape[1]))
        for j in range(deficit):
            i = rng.integers(0, len(Xc))
            nb = neighbors[i, rng.integers(0, k_eff)]
            u = rng.random()
            synth[j] = Xc[i] + u * (Xc[nb] - Xc[i])
        new_X.append(synth)
        new_y.append(np.full(deficit, c, dtype=np.int64))
    return np.vstack(new_X), np.concatenate(new_y)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    f1_macro: float
    confusion: np.ndarray
    confusion_normalized: np.ndarray
    precision_per_class: np.ndarray = field(repr=False, default=None)
    recall_per_class: np.ndarray = field(repr=False, default=None)
    f1_per_class: np.ndarray = field(repr=False, default=None)
    support: np.ndarray = field(repr=False, default=None)
    zero_division: bool = False

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
            "confusion": self.confusion.tolist(),
            "confusion_row_normalized": self.confusion_normalized.tolist(),
            "precision_per_class": self.precision_per_class.tolist(),
            "recall_per_class": self.recall_per_class.tolist(),
            "f1_per_class": self.f1_per_class.tolist(),
            "support": self.support.tolist(),
            "zero_division": self.zero_division,
        }


def compute_metrics(y_true, y_pred, n_classes=None) -> MetricsReport:
    """Accuracy, weighted P/R/F1, macro F1 and confusion matrices.

    Undefined per-class precision or recall (no predictions / no support)
    contributes 0 to the averages and sets the zero_division flag.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("label vectors must be 1-D and equal length")
    n = len(y_true)
    if n == 0:
        raise ValueError("empty input")
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    if y_true.min() < 0 or y_pred.min() < 0 or max(y_true.max(), y_pred.max()) >= n_classes:
        raise ValueError("labels out of range")
    c = n_classes
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)

    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    zero_division = bool(np.any(predicted == 0) or np.any(support == 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
        row_norm = np.where(
            support[:, None] > 0, conf / np.maximum(support[:, None], 1.0), 0.0
        )

    weights = support / n
    return MetricsReport(
        accuracy=float(tp.sum() / n),
        precision_weighted=float((weights * precision).sum()),
        recall_weighted=float((weights * recall).sum()),
        f1_weighted=float((weights * f1).sum()),
        f1_macro=float(f1.mean()),
        confusion=conf,
        confusion_normalized=row_norm,
        precision_per_class=precision,
        recall_per_class=recall,
        f1_per_class=f1,
        support=conf.sum(axis=1),
        zero_division=zero_division,
    )


def weighted_f1(y_true, y_pred, n_classes=None) -> float:
    return compute_metrics(y_true, y_pred, n_classes).f1_weighted


# ---------------------------------------------------------------------------
# synthetic data

# per-feature base mean and spread, matched to magnitudes real extractions
# produce (counts vs fractions differ by orders of magnitude on purpose)
_SYNTH_MEAN = np.array([
    0.35, 0.30, 0.012, 0.010, 0.18, 52000.0,
    0.20, 0.20, 0.20, 0.20, 0.20,
    0.06, 0.06, 0.06, 0.06, 0.25,
])
_SYNTH_STD = np.array([
    0.08, 0.08, 0.004, 0.003, 0.05, 9000.0,
    0.025, 0.025, 0.025, 0.025, 0.025,
    0.015, 0.015, 0.015, 0.015, 0.05,
])
# class offset patterns (rows: normal, wb, sm) on the discriminative axes:
# dense area (15), histogram bin 5 (10), mean local variance (2),
# grad-mag std (1), std local variance (3). The sm row sits between or
# beside the other two so the clusters overlap pairwise.
_SYNTH_OFFSETS = {
    15: (0.0, 1.0, 0.5),
    10: (0.0, 0.0, 1.0),
    2: (0.0, 0.9, 0.45),
    1: (0.0, 0.8, 0.4),
    3: (0.0, 0.3, 0.6),
}
_FRACTION_COLS = (4, 6, 7, 8, 9, 10, 15)


def synthesize_dataset(n_per_class, separation, seed=0) -> Dataset:
    """Three Gaussian clusters in descriptor space.

    Class means differ along the discriminative axes by multiples of
    `separation` per-axis standard deviations; separation 0 collapses all
    means. Fraction-typed columns are clipped to [0,1].
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    blocks, labels, ids = [], [], []
    for c in range(N_CLASSES):
        mean = _SYNTH_MEAN.copy()
        for col, pattern in _SYNTH_OFFSETS.items():
            mean[col] += pattern[c] * separation * _SYNTH_STD[col]
        block = rng.normal(mean, _SYNTH_STD, size=(n_per_class, N_FEATURES))
        block[:, _FRACTION_COLS] = np.clip(block[:, _FRACTION_COLS], 0.0, 1.0)
        blocks.append(block)
        labels.append(np.full(n_per_class, c, dtype=np.int64))
        ids.extend(f"s{c}{i:05d}" for i in range(n_per_class))
    return Dataset(np.vstack(blocks), np.concatenate(labels), ids)


# ---------------------------------------------------------------------------
# CSV I/O


def _float_cell(v: float) -> str:
    return repr(float(v))


def write_feature_csv(path, dataset: Dataset, id_header="id") -> None:
    """`id,label,f01..f16` rows; label cell empty for unlabeled rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_header, "label"] + [f"f{i + 1:02d}" for i in range(N_FEATURES)])
        for i in range(dataset.n):
            label = LABEL_NAMES[dataset.y[i]] if dataset.y[i] >= 0 else ""
            writer.writerow(
                [dataset.ids[i], label] + [_float_cell(v) for v in dataset.X[i]]
            )


def read_feature_csv(path, allow_unlabeled=False) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) != 2 + N_FEATURES or header[1] != "label":
            raise DataError(f"{path}: expected header id,label,f01..f{N_FEATURES}")
        ids, labels, rows = [], [], []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + N_FEATURES:
                raise DataError(f"{path}:{ln}: expected {2 + N_FEATURES} columns")
            ids.append(row[0])
            name = row[1].strip().lower()
            if name == "":
                if not allow_unlabeled:
                    raise DataError(f"{path}:{ln}: missing label")
                labels.append(-1)
            elif name in LABEL_TO_INT:
                labels.append(LABEL_TO_INT[name])
            else:
                raise DataError(f"{path}:{ln}: unknown label {row[1]!r}")
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise DataError(f"{path}:{ln}: non-numeric feature value") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels), ids)


__all__ = [
    "Dataset", "DataError", "LABEL_NAMES", "LABEL_TO_INT", "N_CLASSES",
    "stratified_split", "stratified_kfold", "smote", "compute_metrics",
    "weighted_f1", "MetricsReport", "synthesize_dataset",
    "write_feature_csv", "read_feature_csv", "FEATURE_NAMES",
]
