"""Weighted probability fusion and Nelder-Mead weight search.

Fused prediction: argmax_c sum_i w_i P_i(c). Weights live on the simplex;
the search runs over unconstrained logits mapped through softmax, so any
point the optimizer visits is a valid weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pipeline import weighted_f1

REFLECTION = 1.0
EXPANSION = 2.0
CONTRACTION = 0.5
SHRINK = 0.5
DEFAULT_STEP = 0.05
F_TOL = 1e-8
EVALS_PER_DIM = 500


def fuse(probs, w):
    """Fused probability matrix and argmax labels (ties to the lowest class).

    probs: list of M row-stochastic (n, C) matrices; w: M nonnegative
    weights, normalized internally so a positive rescaling cannot change
    the result.
    """
    if len(probs) == 0:
        raise ValueError("need at least one probability matrix")
    mats = [np.asarray(p, dtype=np.float64) for p in probs]
    shape = mats[0].shape
    for p in mats:
        if p.ndim != 2 or p.shape != shape:
            raise ValueError("probability matrices must share one 2-D shape")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (len(mats),):
        raise ValueError(f"need {len(mats)} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    w = w / total
    fused = np.tensordot(w, np.stack(mats), axes=1)
    return fused, np.argmax(fused, axis=1)


class _BudgetExhausted(Exception):
    """Internal control flow: evaluation budget hit mid-iteration."""


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fx: float
    n_evals: int
    converged: bool


def nelder_mead(f, x0, step=DEFAULT_STEP, f_tol=F_TOL, max_evals=None) -> NelderMeadResult:
    """Downhill simplex minimization of f from x0.

    Standard coefficients (reflect 1.0, expand 2.0, contract 0.5, shrink
    0.5); initial simplex is x0 plus `step` along each coordinate. Stops
    when the simplex f-spread drops below f_tol or the evaluation budget
    (500 per dimension by default) runs out. Returns the best point ever
    evaluated, which on a plateau is the initial vertex.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    n = len(x0)
    if n == 0:
        raise ValueError("x0 must be non-empty")
    if max_evals is None:
        max_evals = EVALS_PER_DIM * n

    best_x, best_f = None, np.inf
    n_evals = 0

    def call(x):
        nonlocal best_x, best_f, n_evals
        if n_evals >= max_evals:
            raise _BudgetExhausted
        fx = float(f(x))
        n_evals += 1
        if fx < best_f:
            best_f, best_x = fx, x.copy()
        return fx

    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] += step
        simplex.append(v)

    converged = False
    try:
        fvals = [call(v) for v in simplex]
        if not all(np.isfinite(fv) for fv in fvals):
            raise ValueError("objective not finite on the initial simplex")
        while True:
            order = sorted(range(n + 1), key=lambda i: fvals[i])
            simplex = [simplex[i] for i in order]
            fvals = [fvals[i] for i in order]
            if fvals[-1] - fvals[0] < f_tol:
                converged = True
                break
            centroid = np.mean(simplex[:-1], axis=0)
            xr = centroid + REFLECTION * (centroid - simplex[-1])
            fr = call(xr)
            if fr < fvals[0]:
                xe = centroid + EXPANSION * (xr - centroid)
                fe = call(xe)
                if fe < fr:
                    simplex[-1], fvals[-1] = xe, fe
                else:
                    simplex[-1], fvals[-1] = xr, fr
            elif fr < fvals[-2]:
                simplex[-1], fvals[-1] = xr, fr
            else:
                if fr < fvals[-1]:
                    xc = centroid + CONTRACTION * (xr - centroid)
                else:
                    xc = centroid + CONTRACTION * (simplex[-1] - centroid)
                fc = call(xc)
                if fc < min(fr, fvals[-1]):
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    for i in range(1, n + 1):
                        simplex[i] = simplex[0] + SHRINK * (simplex[i] - simplex[0])
                        fvals[i] = call(simplex[i])
    except _BudgetExhausted:
        pass

    return NelderMeadResult(x=best_x, fx=best_f, n_evals=n_evals, converged=converged)


def softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def optimize_weights(oof_probs, y_true, step=1.0):
    """Simplex weights maximizing the weighted F1 of the fused OOF labels.

    Searches logits v (weights = softmax(v)) from v = 0, i.e. uniform
    weights. Weighted F1 is piecewise constant, so the default logit step
    is 1.0: large enough to actually flip fused labels between vertices
    (a tiny step would start on a flat simplex and stop immediately).
    Best-ever bookkeeping includes the start, so the result is never worse
    than uniform weighting. Returns (weights, oof_weighted_f1).
    """
    m = len(oof_probs)
    if m < 1:
        raise ValueError("need at least one model")
    y_true = np.asarray(y_true, dtype=np.int64)
    n_classes = oof_probs[0].shape[1]
    if m == 1:
        _, labels = fuse(oof_probs, np.ones(1))
        return np.ones(1), weighted_f1(y_true, labels, n_classes)

    def objective(v):
        _, labels = fuse(oof_probs, softmax(v))
        return -weighted_f1(y_true, labels, n_classes)

    result = nelder_mead(objective, np.zeros(m), step=step)
    return softmax(result.x), -result.fx


__all__ = [
    "fuse", "nelder_mead", "NelderMeadResult", "softmax", "optimize_weights",
]
