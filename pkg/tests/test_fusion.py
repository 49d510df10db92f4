"""Weighted probability fusion and the simplex optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neatboost.fusion import (fuse, nelder_mead, optimize_weights, softmax)
from neatboost.pipeline import compute_metrics


class TestFuse:
    def test_hand_example(self):
        A = np.array([[0.6, 0.3, 0.1]])
        B = np.array([[0.2, 0.5, 0.3]])
        fused, labels = fuse([A, B], np.array([0.7, 0.3]))
        assert np.allclose(fused, [[0.48, 0.36, 0.16]], atol=1e-12)
        assert labels[0] == 0

    def test_degenerate_weight(self):
        rng = np.random.default_rng(1)
        A = rng.dirichlet(np.ones(3), 20)
        B = rng.dirichlet(np.ones(3), 20)
        fused, _ = fuse([A, B], np.array([1.0, 0.0]))
        assert np.array_equal(fused, A)

    def test_identical_models_fixed_point(self):
        A = np.random.default_rng(2).dirichlet(np.ones(3), 15)
        for w in ([0.3, 0.7], [2.0, 2.0]):
            fused, _ = fuse([A, A.copy()], np.array(w))
            assert np.allclose(fused, A, atol=1e-12)

    def test_weights_normalized_internally(self):
        A = np.random.default_rng(3).dirichlet(np.ones(3), 10)
        B = np.random.default_rng(4).dirichlet(np.ones(3), 10)
        f1, _ = fuse([A, B], np.array([0.25, 0.75]))
        f2, _ = fuse([A, B], np.array([1.0, 3.0]))
        assert np.allclose(f1, f2, atol=1e-12)

    def test_tie_breaks_lowest_index(self):
        A = np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]])
        _, labels = fuse([A], np.array([1.0]))
        assert list(labels) == [0, 1]

    def test_row_stochastic(self):
        rng = np.random.default_rng(5)
        mats = [rng.dirichlet(np.ones(3), 30) for _ in range(3)]
        fused, _ = fuse(mats, np.array([0.2, 0.5, 0.3]))
        assert np.allclose(fused.sum(axis=1), 1.0, atol=1e-6)

    def test_errors(self):
        A = np.ones((2, 3)) / 3
        with pytest.raises(ValueError):
            fuse([A, np.ones((3, 3)) / 3], np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            fuse([A], np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            fuse([A, A], np.array([-0.1, 1.1]))
        with pytest.raises(ValueError):
            fuse([A, A], np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            fuse([], np.array([]))


class TestNelderMead:
    def test_quadratic(self):
        res = nelder_mead(lambda v: float((v[0] - 1) ** 2 + (v[1] - 2) ** 2),
                          np.zeros(2))
        assert np.abs(res.x - np.array([1.0, 2.0])).max() < 1e-4
        assert res.converged

    def test_constant_function(self):
        res = nelder_mead(lambda v: 3.0, np.array([0.5, -0.5]))
        assert res.fx == 3.0
        assert np.allclose(res.x, [0.5, -0.5])
        assert res.converged

    def test_rosenbrock(self):
        def rosen(v):
            return float((1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2)

        res = nelder_mead(rosen, np.array([-1.2, 1.0]))
        assert res.fx < 1e-3
        assert res.n_evals <= 1000

    def test_best_ever_returned(self):
        calls = []

        def noisy(v):
            val = float((v[0] - 3) ** 2 + np.sin(17 * v[0]))
            calls.append(val)
            return val

        res = nelder_mead(noisy, np.array([0.0]))
        assert res.fx == min(calls)

    def test_budget_respected(self):
        res = nelder_mead(lambda v: float(v[0]), np.zeros(3))  # unbounded below
        assert res.n_evals <= 500 * 3
        assert not res.converged

    def test_one_dimensional(self):
        res = nelder_mead(lambda v: float((v[0] + 3.7318) ** 2), np.zeros(1))
        assert abs(res.x[0] + 3.7318) < 1e-4

    def test_nonfinite_objective_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            nelder_mead(lambda v: float("nan"), np.zeros(2))

    def test_deterministic(self):
        def f(v):
            return float((v[0] - 0.2) ** 2 + (v[1] + 0.4) ** 2 + v[0] * v[1])

        a = nelder_mead(f, np.zeros(2))
        b = nelder_mead(f, np.zeros(2))
        assert np.array_equal(a.x, b.x) and a.n_evals == b.n_evals


class TestOptimizeWeights:
    def _perfect_and_adversarial(self):
        """Model A always right, model B confidently wrong; A's margins vary
        row to row so perfect fusion genuinely needs w_A near 1."""
        rng = np.random.default_rng(0)
        n = 120
        y = rng.integers(0, 3, n)
        adversary = (y + 1) % 3
        margin = rng.uniform(0.51, 0.95, n)
        perfect = np.zeros((n, 3))
        perfect[np.arange(n), y] = margin
        perfect[np.arange(n), adversary] = 1.0 - margin
        wrong = np.full((n, 3), 0.01)
        wrong[np.arange(n), adversary] = 0.98
        return y, perfect, wrong

    def test_perfect_vs_adversarial(self):
        y, perfect, wrong = self._perfect_and_adversarial()
        w, f1 = optimize_weights([perfect, wrong], y)
        assert w[0] > 0.9
        assert f1 == pytest.approx(1.0)

    def test_weights_on_simplex(self):
        y, perfect, wrong = self._perfect_and_adversarial()
        w, _ = optimize_weights([wrong, perfect], y)
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)

    def test_single_model(self):
        y, perfect, _ = self._perfect_and_adversarial()
        w, f1 = optimize_weights([perfect], y)
        assert np.array_equal(w, [1.0])
        assert f1 == pytest.approx(1.0)

    def test_reported_f1_matches_refused(self):
        rng = np.random.default_rng(9)
        y = rng.integers(0, 3, 80)
        mats = [rng.dirichlet(np.ones(3), 80) for _ in range(2)]
        w, f1 = optimize_weights(mats, y)
        _, labels = fuse(mats, w)
        assert f1 == pytest.approx(
            compute_metrics(y, labels, 3).f1_weighted, abs=1e-12)

    def test_not_worse_than_uniform(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 3, 100)
        good = np.full((100, 3), 0.1)
        good[np.arange(100), y] = 0.8
        flip = good.copy()
        bad_rows = rng.random(100) < 0.35
        flip[bad_rows] = rng.dirichlet(np.ones(3), bad_rows.sum())
        w, f1 = optimize_weights([good, flip], y)
        _, uniform_labels = fuse([good, flip], np.array([0.5, 0.5]))
        uniform_f1 = compute_metrics(y, uniform_labels, 3).f1_weighted
        assert f1 >= uniform_f1 - 1e-12


class TestSoftmax:
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_simplex(self, vals):
        s = softmax(np.array(vals))
        assert abs(s.sum() - 1.0) < 1e-9
        assert np.all(s >= 0)
