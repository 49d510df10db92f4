"""Statistical toolkit: per-feature one-way ANOVA, two-component LDA,
feature ranking.

The F-distribution survival function and the symmetric eigensolver are
implemented here (regularized incomplete beta via Lentz's continued
fraction; cyclic Jacobi rotations) so the numerics carry no dependency
beyond numpy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import FEATURE_NAMES

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-14
_BETACF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    )
    front = math.exp(ln_front)
    # the continued fraction converges fast on its own side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_survival(f_stat: float, df1: int, df2: int) -> float:
    """P(F > f_stat) for an F(df1, df2) variate."""
    if f_stat <= 0.0:
        return 1.0
    if math.isinf(f_stat):
        return 0.0
    x = df2 / (df2 + df1 * f_stat)
    return betainc_regularized(df2 / 2.0, df1 / 2.0, x)


@dataclass
class AnovaResult:
    feature_index: int
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float


def anova_f(column, y, feature_index: int = 0) -> AnovaResult:
    """One-way ANOVA F-test of one descriptor column across label groups.

    Zero within-group variance with unequal means reports F = +inf, p = 0;
    fully constant input reports F = 0, p = 1.
    """
    column = np.asarray(column, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if column.shape != y.shape or column.ndim != 1:
        raise ValueError("column and labels must be matching 1-D arrays")
    groups = [column[y == c] for c in np.unique(y)]
    n_groups = len(groups)
    n = len(column)
    if n_groups < 2:
        raise ValueError("need at least 2 groups")
    if n <= n_groups:
        raise ValueError("need more samples than groups")
    df1 = n_groups - 1
    df2 = n - n_groups
    grand = column.mean()
    ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in groups)
    if ssw <= 0.0:
        if ssb <= 0.0:
            f_stat, p = 0.0, 1.0
        else:
            f_stat, p = math.inf, 0.0
    else:
        f_stat = (ssb / df1) / (ssw / df2)
        p = f_survival(f_stat, df1, df2)
    return AnovaResult(feature_index, float(f_stat), df1, df2, float(p))


# ---------------------------------------------------------------------------
# eigensolver and LDA


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigenvalues/vectors of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
    eigenvectors are the columns.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


@dataclass
class LdaProjection:
    coordinates: np.ndarray      # (n, k)
    explained_ratios: np.ndarray  # (k,), non-increasing
    axes: np.ndarray              # (k, d), unit-norm in the whitened metric
    grand_mean: np.ndarray        # (d,)


LDA_REGULARIZATION = 1e-6


def lda_project(X, y, components: int = 2) -> LdaProjection:
    """Fisher discriminant projection onto the top `components` axes.

    Within-class scatter is regularized by +1e-6 I and symmetrically
    whitened with the Jacobi solver; between-class scatter is then
    eigendecomposed in the whitened space. Explained ratio is eigenvalue
    over trace. components is clamped to C-1 with a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    classes = np.unique(y)
    c = len(classes)
    if c < 2:
        raise ValueError("need at least 2 classes")
    if n <= d:
        raise ValueError(f"need more samples than features (n={n}, d={d})")
    if components > c - 1:
        warnings.warn(
            f"components={components} exceeds C-1={c - 1}; clamping",
            stacklevel=2,
        )
        components = c - 1
    if components < 1:
        raise ValueError("components must be >= 1")

    grand = X.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for cls in classes:
        xc = X[y == cls]
        mu = xc.mean(axis=0)
        centered = xc - mu
        s_w += centered.T @ centered
        dm = (mu - grand)[:, None]
        s_b += len(xc) * (dm @ dm.T)
    s_w += LDA_REGULARIZATION * np.eye(d)

    w_vals, w_vecs = jacobi_eigh(s_w)
    inv_sqrt = w_vecs @ np.diag(1.0 / np.sqrt(np.maximum(w_vals, 1e-12))) @ w_vecs.T
    m = inv_sqrt @ s_b @ inv_sqrt
    m = 0.5 * (m + m.T)
    b_vals, b_vecs = jacobi_eigh(m)
    b_vals = np.maximum(b_vals, 0.0)

    trace = b_vals.sum()
    ratios = b_vals[:components] / trace if trace > 0 else np.zeros(components)
    axes = (inv_sqrt @ b_vecs[:, :components]).T
    # deterministic sign: largest-|loading| coefficient positive
    for i in range(components):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    coords = (X - grand) @ axes.T
    return LdaProjection(coords, ratios, axes, grand)


# ---------------------------------------------------------------------------
# ranking


def rank_features(X, y, feature_names=None, model=None):
    """Per-feature ANOVA table sorted by descending F.

    Rows: {index, name, F, df1, df2, p, gain}; gain column comes from the
    tree model's cumulative split gains when one is supplied, else None.
    """
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else list(FEATURE_NAMES)
    if X.shape[1] != len(names):
        names = [f"f{i + 1:02d}" for i in range(X.shape[1])]
    gains = None
    if model is not None:
        gains = np.asarray(model.feature_gains, dtype=np.float64)
        if len(gains) != X.shape[1]:
            raise ValueError("model feature count does not match the data")
    rows = []
    for j in range(X.shape[1]):
        res = anova_f(X[:, j], y, feature_index=j)
        rows.append({
            "index": j,
            "name": names[j],
            "F": res.f_statistic,
            "df1": res.df_between,
            "df2": res.df_within,
            "p": res.p_value,
            "gain": float(gains[j]) if gains is not None else None,
        })
    rows.sort(key=lambda r: (-r["F"], r["index"]))
    return rows


__all__ = [
    "AnovaResult", "anova_f", "betainc_regularized", "f_survival",
    "jacobi_eigh", "LdaProjection", "lda_project", "rank_features",
    "LDA_REGULARIZATION",
]
