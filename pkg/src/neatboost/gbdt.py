"""Native histogram gradient-boosted trees, softmax one-vs-all multiclass.

Per boosting round, per class: a leaf-wise regression tree is fit to the
cross-entropy gradients g_i = p_i - 1[y_i = c] and hessians
h_i = p_i (1 - p_i). Features are discretized to at most 255 bins; when a
feature has <= 255 distinct values the bin edges are midpoints between
consecutive uniques, which makes histogram splits identical to exhaustive
threshold search. Tree growth and traversal run in numba kernels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

MAX_BINS = 255
MODEL_SCHEMA_VERSION = "1"
# Distinct attainable gains are rationals separated far beyond float dust, so
# a candidate must beat the incumbent by this margin to count as an improvement.
# Without it, exactly-tied candidates (two features isolating the same rows)
# would be ranked by histogram summation rounding instead of scan order.
MIN_SPLIT_GAIN = 1e-12


@dataclass
class GbdtConfig:
    n_estimators: int = 100
    max_depth: int = 6
    num_leaves: int = 31
    learning_rate: float = 0.1
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    lambda_l1: float = 0.0
    lambda_l2: float = 0.0
    min_child_samples: int = 2
    cat_smooth: float = 1.0  # accepted and recorded, no categorical features exist
    seed: int = 0

    def validate(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        for name in ("feature_fraction", "bagging_fraction"):
            frac = getattr(self, name)
            if not 0.0 < frac <= 1.0:
                raise ValueError(f"{name} must lie in (0,1]")
        if self.lambda_l1 < 0 or self.lambda_l2 < 0:
            raise ValueError("lambda_l1/lambda_l2 must be >= 0")
        if self.min_child_samples < 1:
            raise ValueError("min_child_samples must be >= 1")


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _score(g: float, h: float, lam2: float) -> float:
    denom = h + lam2
    if denom <= 0.0:
        return 0.0
    return g * g / denom


@njit(cache=True)
def _leaf_value(g: float, h: float, lam1: float, lam2: float) -> float:
    denom = h + lam2
    if denom <= 0.0:
        return 0.0
    mag = abs(g) - lam1
    if mag <= 0.0:
        return 0.0
    return -math.copysign(1.0, g) * mag / denom


@njit(cache=True)
def _best_split(binned, grad, hess, n_bins, idx, start, end, min_child, lam2):
    """Best (gain, feature, bin) for one node; gain 0 when nothing beats it."""
    m_node = end - start
    k = binned.shape[1]
    g_total = 0.0
    h_total = 0.0
    for ii in range(start, end):
        s = idx[ii]
        g_total += grad[s]
        h_total += hess[s]
    parent = _score(g_total, h_total, lam2)
    best_gain = 0.0
    best_feat = -1
    best_bin = -1
    g_hist = np.zeros(256, np.float64)
    h_hist = np.zeros(256, np.float64)
    c_hist = np.zeros(256, np.int64)
    for f in range(k):
        nb = n_bins[f]
        if nb < 2:
            continue
        for b in range(nb):
            g_hist[b] = 0.0
            h_hist[b] = 0.0
            c_hist[b] = 0
        for ii in range(start, end):
            s = idx[ii]
            b = binned[s, f]
            g_hist[b] += grad[s]
            h_hist[b] += hess[s]
            c_hist[b] += 1
        gl = 0.0
        hl = 0.0
        cl = 0
        for b in range(nb - 1):
            gl += g_hist[b]
            hl += h_hist[b]
            cl += c_hist[b]
            if cl < min_child or m_node - cl < min_child:
                continue
            gain = 0.5 * (
                _score(gl, hl, lam2)
                + _score(g_total - gl, h_total - hl, lam2)
                - parent
            )
            if gain > best_gain + MIN_SPLIT_GAIN * (1.0 + best_gain):
                best_gain = gain
                best_feat = f
                best_bin = b
    return best_gain, best_feat, best_bin, g_total, h_total


@njit(cache=True)
def _grow_tree(binned, grad, hess, n_bins, max_depth, num_leaves,
               min_child, lam1, lam2):
    """Leaf-wise best-first tree growth over binned features.

    Returns (feature, bin, left, right, value, feat_gain). feature == -1
    marks a leaf; values are unscaled Newton leaf estimates.
    """
    m = binned.shape[0]
    k = binned.shape[1]
    max_nodes = 2 * num_leaves
    node_feature = np.full(max_nodes, -1, np.int64)
    node_bin = np.full(max_nodes, -1, np.int64)
    node_left = np.full(max_nodes, -1, np.int64)
    node_right = np.full(max_nodes, -1, np.int64)
    node_value = np.zeros(max_nodes, np.float64)
    node_depth = np.zeros(max_nodes, np.int64)
    node_start = np.zeros(max_nodes, np.int64)
    node_end = np.zeros(max_nodes, np.int64)
    cand_gain = np.zeros(max_nodes, np.float64)
    cand_feat = np.full(max_nodes, -1, np.int64)
    cand_bin = np.full(max_nodes, -1, np.int64)
    feat_gain = np.zeros(k, np.float64)

    idx = np.arange(m)
    tmp = np.empty(m, np.int64)

    node_start[0] = 0
    node_end[0] = m
    gain, f, b, g_tot, h_tot = _best_split(
        binned, grad, hess, n_bins, idx, 0, m, min_child, lam2)
    node_value[0] = _leaf_value(g_tot, h_tot, lam1, lam2)
    if max_depth > 0 and m >= 2 * min_child:
        cand_gain[0] = gain
        cand_feat[0] = f
        cand_bin[0] = b
    n_nodes = 1
    n_leaves = 1

    while n_leaves < num_leaves:
        best_node = -1
        best_gain = 0.0
        for nd in range(n_nodes):
            if node_feature[nd] < 0 and cand_gain[nd] > best_gain + \
                    MIN_SPLIT_GAIN * (1.0 + best_gain):
                best_gain = cand_gain[nd]
                best_node = nd
        if best_node < 0:
            break
        f = cand_feat[best_node]
        b = cand_bin[best_node]
        s0 = node_start[best_node]
        e0 = node_end[best_node]
        li = s0
        n_left = 0
        for ii in range(s0, e0):
            if binned[idx[ii], f] <= b:
                n_left += 1
        ri = s0 + n_left
        for ii in range(s0, e0):
            s = idx[ii]
            if binned[s, f] <= b:
                tmp[li] = s
                li += 1
            else:
                tmp[ri] = s
                ri += 1
        for ii in range(s0, e0):
            idx[ii] = tmp[ii]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        node_feature[best_node] = f
        node_bin[best_node] = b
        node_left[best_node] = lc
        node_right[best_node] = rc
        feat_gain[f] += best_gain
        cand_gain[best_node] = 0.0
        depth = node_depth[best_node] + 1
        bounds = ((s0, s0 + n_left), (s0 + n_left, e0))
        for ci in range(2):
            child = lc if ci == 0 else rc
            cs, ce = bounds[ci]
            node_start[child] = cs
            node_end[child] = ce
            node_depth[child] = depth
            gain, cf, cb, g_tot, h_tot = _best_split(
                binned, grad, hess, n_bins, idx, cs, ce, min_child, lam2)
            node_value[child] = _leaf_value(g_tot, h_tot, lam1, lam2)
            if depth < max_depth and ce - cs >= 2 * min_child:
                cand_gain[child] = gain
                cand_feat[child] = cf
                cand_bin[child] = cb
        n_leaves += 1

    return (node_feature[:n_nodes], node_bin[:n_nodes], node_left[:n_nodes],
            node_right[:n_nodes], node_value[:n_nodes], feat_gain)


@njit(cache=True)
def _apply_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


# ---------------------------------------------------------------------------
# model


@dataclass
class Tree:
    feature: np.ndarray    # int64; -1 marks a leaf
    threshold: np.ndarray  # raw-value rule: x < threshold goes left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # leaf values, learning-rate scaled

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply_tree(X, self.feature, self.threshold,
                           self.left, self.right, self.value)

    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), np.int64)
        for nd in range(len(self.feature)):
            if self.feature[nd] >= 0:
                depths[self.left[nd]] = depths[nd] + 1
                depths[self.right[nd]] = depths[nd] + 1
        return int(depths.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], np.int64),
            threshold=np.asarray(d["threshold"], np.float64),
            left=np.asarray(d["left"], np.int64),
            right=np.asarray(d["right"], np.int64),
            value=np.asarray(d["value"], np.float64),
        )


@dataclass
class TreeEnsembleModel:
    config: GbdtConfig
    n_classes: int
    n_features: int
    priors: np.ndarray
    trees: list                      # [round][class] -> Tree
    bin_edges: list
    feature_gains: np.ndarray
    train_loss: list = field(default_factory=list)  # entry 0: priors only


def _softmax_rows(raw: np.ndarray) -> np.ndarray:
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(y: np.ndarray, probs: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(y)), y], 1e-15, 1.0)
    return float(-np.mean(np.log(p)))


def _bin_features(X: np.ndarray):
    n, d = X.shape
    edges_list = []
    binned = np.empty((n, d), np.uint8)
    n_bins = np.empty(d, np.int64)
    for f in range(d):
        col = X[:, f]
        uniq = np.unique(col)
        if len(uniq) <= MAX_BINS:
            edges = (uniq[1:] + uniq[:-1]) / 2.0
        else:
            qs = np.quantile(col, np.arange(1, MAX_BINS) / MAX_BINS)
            edges = np.unique(qs)
        binned[:, f] = np.searchsorted(edges, col, side="right")
        edges_list.append(edges)
        n_bins[f] = len(edges) + 1
    return binned, edges_list, n_bins


def fit(X, y, cfg: GbdtConfig) -> TreeEnsembleModel:
    """Boosted multiclass model; deterministic given (X, y, cfg)."""
    cfg.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty dataset")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise ValueError("single-class input: need at least 2 classes")
    n, d = X.shape
    n_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=n_classes)
    priors = np.log(np.maximum(counts, 1e-12) / n)

    binned, edges_list, n_bins = _bin_features(X)
    rng = np.random.default_rng(cfg.seed)
    raw = np.tile(priors, (n, 1))
    onehot = np.eye(n_classes)[y]
    losses = [_cross_entropy(y, _softmax_rows(raw))]
    trees = []
    feature_gains = np.zeros(d)

    for _ in range(cfg.n_estimators):
        p = _softmax_rows(raw)
        if cfg.bagging_fraction < 1.0:
            nb = max(1, int(round(cfg.bagging_fraction * n)))
            rows = np.sort(rng.choice(n, size=nb, replace=False))
        else:
            rows = None
        round_trees = []
        for c in range(n_classes):
            g = p[:, c] - onehot[:, c]
            h = p[:, c] * (1.0 - p[:, c])
            if cfg.feature_fraction < 1.0:
                nf = max(1, int(round(cfg.feature_fraction * d)))
                feats = np.sort(rng.choice(d, size=nf, replace=False))
            else:
                feats = None
            sub = binned if feats is None else np.ascontiguousarray(binned[:, feats])
            bins = n_bins if feats is None else np.ascontiguousarray(n_bins[feats])
            if rows is not None:
                sub = np.ascontiguousarray(sub[rows])
                g_fit, h_fit = g[rows], h[rows]
            else:
                g_fit, h_fit = g, h
            node_f, node_b, left, right, value, gains = _grow_tree(
                sub, g_fit, h_fit, bins,
                cfg.max_depth, cfg.num_leaves, cfg.min_child_samples,
                cfg.lambda_l1, cfg.lambda_l2)
            # map back to global feature ids and raw-value thresholds
            global_f = node_f.copy()
            threshold = np.zeros(len(node_f))
            for nd in range(len(node_f)):
                if node_f[nd] >= 0:
                    gf = int(node_f[nd]) if feats is None else int(feats[node_f[nd]])
                    global_f[nd] = gf
                    threshold[nd] = edges_list[gf][node_b[nd]]
            if feats is None:
                feature_gains += gains
            else:
                feature_gains[feats] += gains
            tree = Tree(global_f, threshold, left, right,
                        value * cfg.learning_rate)
            raw[:, c] += tree.apply(X)
            round_trees.append(tree)
        trees.append(round_trees)
        losses.append(_cross_entropy(y, _softmax_rows(raw)))

    return TreeEnsembleModel(
        config=cfg, n_classes=n_classes, n_features=d, priors=priors,
        trees=trees, bin_edges=edges_list, feature_gains=feature_gains,
        train_loss=losses)


def predict_proba(model: TreeEnsembleModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {X.shape[1] if X.ndim == 2 else 'non-2D'}")
    raw = np.tile(model.priors, (len(X), 1))
    for round_trees in model.trees:
        for c, tree in enumerate(round_trees):
            raw[:, c] += tree.apply(X)
    return _softmax_rows(raw)


def feature_importance(model: TreeEnsembleModel):
    """(feature index, cumulative split gain), descending gain, ties by index."""
    gains = model.feature_gains
    order = sorted(range(len(gains)), key=lambda i: (-gains[i], i))
    return [(i, float(gains[i])) for i in order]


# ---------------------------------------------------------------------------
# serialization


def to_dict(model: TreeEnsembleModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_type": "gbdt",
        "config": asdict(model.config),
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "priors": model.priors.tolist(),
        "bin_edges": [e.tolist() for e in model.bin_edges],
        "feature_gains": model.feature_gains.tolist(),
        "train_loss": list(model.train_loss),
        "trees": [[t.to_dict() for t in rnd] for rnd in model.trees],
    }


def from_dict(d: dict) -> TreeEnsembleModel:
    if d.get("schema_version") != MODEL_SCHEMA_VERSION or d.get("model_type") != "gbdt":
        raise ValueError("not a recognized gbdt model file")
    return TreeEnsembleModel(
        config=GbdtConfig(**d["config"]),
        n_classes=int(d["n_classes"]),
        n_features=int(d["n_features"]),
        priors=np.asarray(d["priors"], np.float64),
        trees=[[Tree.from_dict(t) for t in rnd] for rnd in d["trees"]],
        bin_edges=[np.asarray(e, np.float64) for e in d["bin_edges"]],
        feature_gains=np.asarray(d["feature_gains"], np.float64),
        train_loss=list(d["train_loss"]),
    )


def save(model: TreeEnsembleModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh, sort_keys=True, separators=(",", ":"))


def load(path) -> TreeEnsembleModel:
    with open(path) as fh:
        return from_dict(json.load(fh))


__all__ = [
    "GbdtConfig", "Tree", "TreeEnsembleModel", "fit", "predict_proba",
    "feature_importance", "to_dict", "from_dict", "save", "load",
    "MAX_BINS",
]
