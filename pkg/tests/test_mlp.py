"""Attention-gated MLP: gating, schedules, training behavior, grad check."""

import math

import numpy as np
import pytest

from neatboost import mlp
from neatboost.mlp import (MlpConfig, TrainingDivergedError, _forward_pass,
                           cosine_lr, forward, from_dict, gelu, gelu_grad,
                           gradient_check, load, loss_and_grads, mixup_batch,
                           predict_proba, save, smoothed_targets, to_dict,
                           train)


def _toy_clusters(seed, n_per=8, d=4, spread=0.15, centers=3.0):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for c in range(3):
        mu = np.zeros(d)
        mu[c % d] = centers * (c + 1)
        X.append(mu + rng.normal(scale=spread, size=(n_per, d)))
        y.extend([c] * n_per)
    return np.vstack(X), np.array(y)


def _near_init_model(seed, d=6, hidden=24):
    X, y = _toy_clusters(seed, n_per=10, d=d)
    cfg = MlpConfig(hidden_size=hidden, dropout=0.0, learning_rate=1e-4,
                    epochs=1, batch_size=len(y), seed=seed)
    return train(X, y, cfg)


class _FakeRng:
    """Deterministic stand-in: fixed beta draw, reversing permutation."""

    def __init__(self, lam):
        self.lam = lam

    def beta(self, a, b):
        return self.lam

    def permutation(self, n):
        return np.arange(n)[::-1]


class TestTargets:
    def test_smoothing_example(self):
        t = smoothed_targets([0, 1], 3, 0.1)
        assert t[0] == pytest.approx([0.9, 0.05, 0.05])
        assert t[1] == pytest.approx([0.05, 0.9, 0.05])

    def test_zero_epsilon_is_onehot(self):
        t = smoothed_targets([2, 0], 3, 0.0)
        assert np.array_equal(t, [[0, 0, 1], [1, 0, 0]])

    def test_rows_sum_to_one(self):
        t = smoothed_targets([0, 1, 2, 1], 3, 0.37)
        assert np.allclose(t.sum(axis=1), 1.0, atol=1e-12)


class TestCosineSchedule:
    def test_endpoints(self):
        assert cosine_lr(0.5, 0, 150) == pytest.approx(0.5, abs=1e-12)
        assert cosine_lr(0.5, 149, 150) == pytest.approx(0.0, abs=1e-12)

    def test_midpoint_half(self):
        assert cosine_lr(1.0, 5, 11) == pytest.approx(0.5, abs=1e-12)

    def test_single_epoch(self):
        assert cosine_lr(0.3, 0, 1) == 0.3

    def test_monotone_decay(self):
        vals = [cosine_lr(1.0, e, 40) for e in range(40)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


class TestGelu:
    def test_values(self):
        assert gelu(np.array([0.0]))[0] == 0.0
        assert gelu(np.array([10.0]))[0] == pytest.approx(10.0, abs=1e-6)
        assert gelu(np.array([-10.0]))[0] == pytest.approx(0.0, abs=1e-6)

    def test_grad_at_zero(self):
        assert gelu_grad(np.array([0.0]))[0] == pytest.approx(0.5, abs=1e-12)

    def test_grad_matches_finite_difference(self):
        x = np.linspace(-4, 4, 33)
        eps = 1e-6
        fd = (gelu(x + eps) - gelu(x - eps)) / (2 * eps)
        assert np.allclose(gelu_grad(x), fd, atol=1e-8)


class TestMixup:
    def test_zero_alpha_identity(self):
        X = np.arange(12.0).reshape(4, 3)
        Y = np.eye(3)[[0, 1, 2, 0]]
        Xm, Ym = mixup_batch(X, Y, 0.0, np.random.default_rng(0))
        assert np.array_equal(Xm, X) and np.array_equal(Ym, Y)

    def test_forced_lambda_one_keeps_batch(self):
        X = np.arange(6.0).reshape(3, 2)
        Y = np.eye(3)
        Xm, Ym = mixup_batch(X, Y, 1.0, _FakeRng(1.0))
        assert np.array_equal(Xm, X) and np.array_equal(Ym, Y)

    def test_half_lambda_label_blend(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        Y = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        Xm, Ym = mixup_batch(X, Y, 1.0, _FakeRng(0.5))
        assert Ym[0] == pytest.approx([0.5, 0.5, 0.0])
        assert Xm[0] == pytest.approx([0.5, 0.5])

    def test_blend_reconstruction_with_real_rng(self):
        X = np.random.default_rng(5).normal(size=(10, 4))
        Y = np.eye(3)[np.random.default_rng(6).integers(0, 3, 10)]
        Xm, Ym = mixup_batch(X, Y, 0.4, np.random.default_rng(7))
        ref = np.random.default_rng(7)
        lam = float(ref.beta(0.4, 0.4))
        perm = ref.permutation(10)
        assert np.allclose(Xm, lam * X + (1 - lam) * X[perm], atol=1e-15)
        assert np.allclose(Ym.sum(axis=1), 1.0, atol=1e-12)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            mixup_batch(np.zeros((2, 2)), np.eye(2), -0.5, _FakeRng(1.0))


class TestAttentionGate:
    def test_gates_start_at_half(self):
        model = _near_init_model(0)
        model.params["att_w"][:] = 0.0
        model.params["att_b"][:] = 0.0
        X = np.random.default_rng(1).normal(size=(5, model.n_features))
        _, cache = _forward_pass(model, X, train=True, drop_p=0.0)
        assert np.allclose(cache["alpha"], 0.5, atol=1e-15)
        assert np.allclose(cache["xt"], 0.5 * X, atol=1e-15)

    def test_saturated_bias_passes_input_through(self):
        model = _near_init_model(1)
        model.params["att_b"][:] = 20.0
        X = np.random.default_rng(2).normal(size=(4, model.n_features))
        _, cache = _forward_pass(model, X, train=True, drop_p=0.0)
        assert np.allclose(cache["xt"], X, atol=1e-6)

    def test_zero_input_gated_to_zero(self):
        model = _near_init_model(2)
        X = np.zeros((3, model.n_features))
        _, cache = _forward_pass(model, X, train=True, drop_p=0.0)
        assert np.array_equal(cache["xt"], X)

    def test_gates_open_for_any_finite_input(self):
        model = _near_init_model(3)
        X = np.random.default_rng(4).normal(scale=50, size=(6, model.n_features))
        _, cache = _forward_pass(model, X, train=True, drop_p=0.0)
        assert np.all(cache["alpha"] > 0) and np.all(cache["alpha"] < 1)


class TestForward:
    def test_simplex_output(self):
        model = _near_init_model(5)
        X = np.random.default_rng(6).normal(size=(9, model.n_features))
        probs = forward(model, X)
        assert probs.shape == (9, 3)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((probs > 0) & (probs < 1))

    def test_single_vector_matches_batch(self):
        model = _near_init_model(7)
        X = np.random.default_rng(8).normal(size=(3, model.n_features))
        batch = forward(model, X)
        one = forward(model, X[1])
        assert one.shape == (3,)
        assert np.allclose(one, batch[1], atol=1e-12)

    def test_eval_deterministic(self):
        model = _near_init_model(9)
        x = np.random.default_rng(10).normal(size=model.n_features)
        assert np.array_equal(forward(model, x), forward(model, x))

    def test_errors(self):
        model = _near_init_model(11)
        with pytest.raises(ValueError, match="mode"):
            forward(model, np.zeros(model.n_features), mode="test")
        with pytest.raises(ValueError, match="features"):
            forward(model, np.zeros(model.n_features + 1))
        bad = np.zeros(model.n_features)
        bad[0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            forward(model, bad)

    def test_train_mode_dropout_needs_rng(self):
        model = _near_init_model(12)
        model.config.dropout = 0.5
        with pytest.raises(ValueError, match="rng"):
            forward(model, np.zeros(model.n_features), mode="train")


class TestTrain:
    def test_separable_toy_converges(self):
        X, y = _toy_clusters(20, n_per=7, d=4)  # 21 samples, wide margins
        cfg = MlpConfig(hidden_size=16, dropout=0.0, learning_rate=1e-2,
                        weight_decay=0.0, label_smoothing=0.0,
                        mixup_alpha=0.0, epochs=200, batch_size=32, seed=0)
        model = train(X, y, cfg)
        assert model.train_loss[-1] < 0.1
        assert len(model.train_loss) == 200
        preds = predict_proba(model, X).argmax(axis=1)
        assert np.mean(preds == y) == 1.0

    def test_full_batch_descent(self):
        rng = np.random.default_rng(30)
        X = rng.normal(size=(8, 5))
        y = rng.integers(0, 3, size=8)
        y[:3] = [0, 1, 2]
        cfg = MlpConfig(hidden_size=12, dropout=0.0, learning_rate=1e-3,
                        weight_decay=0.0, label_smoothing=0.0,
                        mixup_alpha=0.0, epochs=60, batch_size=8, seed=1)
        model = train(X, y, cfg)
        losses = model.train_loss
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_regularizers_still_train(self):
        X, y = _toy_clusters(31, n_per=10, d=4)
        cfg = MlpConfig(hidden_size=16, dropout=0.2, learning_rate=5e-3,
                        weight_decay=1e-3, label_smoothing=0.1,
                        mixup_alpha=0.2, epochs=80, batch_size=16, seed=2)
        model = train(X, y, cfg)
        assert np.isfinite(model.train_loss).all()
        assert model.train_loss[-1] < model.train_loss[0]

    def test_deterministic_given_seed(self, tmp_path):
        X, y = _toy_clusters(32, n_per=6)
        cfg = dict(hidden_size=8, dropout=0.1, mixup_alpha=0.1, epochs=5,
                   batch_size=8, seed=3)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save(train(X, y, MlpConfig(**cfg)), a)
        save(train(X, y, MlpConfig(**cfg)), b)
        assert a.read_bytes() == b.read_bytes()

    def test_constant_feature_guarded(self):
        X, y = _toy_clusters(33, n_per=6)
        X[:, 0] = 4.2
        model = train(X, y, MlpConfig(hidden_size=8, epochs=3, seed=0))
        probs = predict_proba(model, X)
        assert np.isfinite(probs).all()
        assert model.scaler_std[0] == 1.0

    def test_divergence_reported(self, monkeypatch):
        X, y = _toy_clusters(34, n_per=5)
        monkeypatch.setattr(mlp, "_loss", lambda probs, targets: float("nan"))
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train(X, y, MlpConfig(hidden_size=8, epochs=2, seed=0))

    def test_input_validation(self):
        X, y = _toy_clusters(35, n_per=4)
        with pytest.raises(ValueError):
            train(X, y[:-1], MlpConfig())
        with pytest.raises(ValueError, match="class"):
            train(X, np.zeros(len(y), int), MlpConfig())
        bad = X.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            train(bad, y, MlpConfig())

    def test_config_validation(self):
        for bad in (MlpConfig(hidden_size=0), MlpConfig(dropout=1.0),
                    MlpConfig(learning_rate=0.0), MlpConfig(weight_decay=-1),
                    MlpConfig(label_smoothing=1.0), MlpConfig(mixup_alpha=-1),
                    MlpConfig(epochs=0), MlpConfig(batch_size=0)):
            with pytest.raises(ValueError):
                bad.validate()


class TestGradientCheck:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_backprop_correct(self, seed):
        model = _near_init_model(seed)
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(6, model.n_features))
        y = rng.integers(0, 3, size=6)
        assert gradient_check(model, (X, y)) < 1e-4

    def test_trained_model_still_passes(self):
        X, y = _toy_clusters(40, n_per=10)
        model = train(X, y, MlpConfig(hidden_size=16, dropout=0.0,
                                      epochs=30, batch_size=16, seed=4))
        rng = np.random.default_rng(41)
        Xc = rng.normal(size=(6, model.n_features))
        yc = rng.integers(0, 3, size=6)
        assert gradient_check(model, (Xc, yc)) < 1e-4

    def test_detects_corrupted_attention_gradient(self, monkeypatch):
        model = _near_init_model(42)
        original = mlp._backward_pass

        def corrupted(model_, cache, probs, targets):
            grads = original(model_, cache, probs, targets)
            grads["att_w"] = grads["att_w"] * 2.0
            return grads

        monkeypatch.setattr(mlp, "_backward_pass", corrupted)
        rng = np.random.default_rng(43)
        X = rng.normal(size=(6, model.n_features))
        y = rng.integers(0, 3, size=6)
        assert gradient_check(model, (X, y)) > 1e-2

    def test_zero_perturbation_zero_difference(self):
        model = _near_init_model(44)
        rng = np.random.default_rng(45)
        X = rng.normal(size=(4, model.n_features))
        targets = smoothed_targets(rng.integers(0, 3, 4), 3, 0.0)
        l1, _ = loss_and_grads(model, X, targets)
        l2, _ = loss_and_grads(model, X, targets)
        assert l1 == l2

    def test_batch_size_limit(self):
        model = _near_init_model(46)
        X = np.zeros((9, model.n_features))
        with pytest.raises(ValueError, match="8"):
            gradient_check(model, (X, np.zeros(9, int)))


class TestSerialization:
    def test_round_trip_predictions(self, tmp_path):
        X, y = _toy_clusters(50, n_per=8)
        model = train(X, y, MlpConfig(hidden_size=12, epochs=10, seed=5))
        path = tmp_path / "mlp.json"
        save(model, path)
        loaded = load(path)
        assert np.allclose(predict_proba(model, X), predict_proba(loaded, X),
                           atol=1e-12)
        assert to_dict(model) == to_dict(loaded)

    def test_rejects_foreign_payload(self):
        with pytest.raises(ValueError, match="mlp"):
            from_dict({"schema_version": "0", "model_type": "attention_mlp"})
        with pytest.raises(ValueError, match="mlp"):
            from_dict({"schema_version": mlp.MODEL_SCHEMA_VERSION,
                       "model_type": "gbdt"})
