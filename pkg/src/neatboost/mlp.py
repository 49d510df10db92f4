"""Attention-gated MLP with manual numpy backpropagation.

Architecture: per-feature sigmoid gates alpha_i = sigmoid(w_i x_i + b_i)
scale the standardized inputs, then two hidden blocks of
affine -> batch-norm -> GELU -> dropout, then affine -> softmax.
Training minimizes label-smoothed cross-entropy on Mixup batches with
AdamW (decoupled weight decay) under cosine-annealed learning rate.

`forward` expects standardized inputs; `train` fits the standardizer and
stores it on the model, and `predict_proba` applies it to raw features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
_DECAYED = ("att_w", "W1", "W2", "W3")
MODEL_SCHEMA_VERSION = "1"

# hidden affines carry no bias: batch norm would cancel it and the beta
# shift already covers that degree of freedom
_PARAM_NAMES = (
    "att_w", "att_b",
    "W1", "gamma1", "beta1",
    "W2", "gamma2", "beta2",
    "W3", "b3",
)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class MlpConfig:
    hidden_size: int = 64
    dropout: float = 0.1
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    label_smoothing: float = 0.0
    mixup_alpha: float = 0.0
    epochs: int = 150
    batch_size: int = 32
    seed: int = 0

    def validate(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0,1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0,1)")
        if self.mixup_alpha < 0:
            raise ValueError("mixup_alpha must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class MlpModel:
    config: MlpConfig
    n_features: int
    n_classes: int
    params: dict
    running_mean1: np.ndarray
    running_var1: np.ndarray
    running_mean2: np.ndarray
    running_var2: np.ndarray
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    train_loss: list = field(default_factory=list)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    """Anneals from lr0 to exactly 0 at the final epoch."""
    if total_epochs <= 1:
        return lr0
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * epoch / (total_epochs - 1)))


def smoothed_targets(y, n_classes: int, epsilon: float) -> np.ndarray:
    """(1 - eps) on the true class, eps/(C-1) elsewhere."""
    onehot = np.eye(n_classes)[np.asarray(y, dtype=np.int64)]
    if epsilon == 0.0:
        return onehot
    return onehot * (1.0 - epsilon) + (1.0 - onehot) * (epsilon / (n_classes - 1))


def mixup_batch(X, Y, alpha: float, rng):
    """Convex within-batch blend; one Beta(alpha, alpha) draw per batch."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0.0:
        return X, Y
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(X))
    return lam * X + (1.0 - lam) * X[perm], lam * Y + (1.0 - lam) * Y[perm]


# ---------------------------------------------------------------------------
# forward / backward


def _forward_pass(model: MlpModel, X, train: bool, drop_p: float,
                  rng=None, update_running: bool = False):
    p = model.params
    cache = {"X": X}
    alpha = _sigmoid(p["att_w"] * X + p["att_b"])
    xt = alpha * X
    cache["alpha"], cache["xt"] = alpha, xt

    h = xt
    for layer in (1, 2):
        w = p[f"W{layer}"]
        gamma, beta = p[f"gamma{layer}"], p[f"beta{layer}"]
        z = h @ w
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_running:
                rm = getattr(model, f"running_mean{layer}")
                rv = getattr(model, f"running_var{layer}")
                rm += BN_MOMENTUM * (mu - rm)
                rv += BN_MOMENTUM * (var - rv)
        else:
            mu = getattr(model, f"running_mean{layer}")
            var = getattr(model, f"running_var{layer}")
        xhat = (z - mu) / np.sqrt(var + BN_EPS)
        a = gamma * xhat + beta
        g = gelu(a)
        if train and drop_p > 0.0:
            mask = (rng.random(g.shape) >= drop_p) / (1.0 - drop_p)
            d = g * mask
        else:
            mask = None
            d = g
        cache[f"h{layer}_in"] = h
        cache[f"z{layer}"], cache[f"xhat{layer}"] = z, xhat
        cache[f"mu{layer}"], cache[f"var{layer}"] = mu, var
        cache[f"a{layer}"], cache[f"mask{layer}"] = a, mask
        h = d
    cache["h_out"] = h
    logits = h @ p["W3"] + p["b3"]
    probs = _softmax_rows(logits)
    return probs, cache


def _bn_backward(dout, xhat, gamma, var):
    std = np.sqrt(var + BN_EPS)
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    dz = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / std
    return dz, dgamma, dbeta


def _backward_pass(model: MlpModel, cache, probs, targets):
    p = model.params
    batch = len(probs)
    grads = {}
    dlogits = (probs - targets) / batch
    grads["W3"] = cache["h_out"].T @ dlogits
    grads["b3"] = dlogits.sum(axis=0)
    d = dlogits @ p["W3"].T
    for layer in (2, 1):
        if cache[f"mask{layer}"] is not None:
            d = d * cache[f"mask{layer}"]
        d = d * gelu_grad(cache[f"a{layer}"])
        d, grads[f"gamma{layer}"], grads[f"beta{layer}"] = _bn_backward(
            d, cache[f"xhat{layer}"], p[f"gamma{layer}"], cache[f"var{layer}"])
        grads[f"W{layer}"] = cache[f"h{layer}_in"].T @ d
        d = d @ p[f"W{layer}"].T
    # attention: d is dL/d(xt)
    X, alpha = cache["X"], cache["alpha"]
    dalpha = d * X
    ds = dalpha * alpha * (1.0 - alpha)
    grads["att_w"] = (ds * X).sum(axis=0)
    grads["att_b"] = ds.sum(axis=0)
    return grads


def _loss(probs, targets):
    return float(-np.mean(np.sum(targets * np.log(np.clip(probs, 1e-15, None)),
                                 axis=1)))


def loss_and_grads(model: MlpModel, X, targets):
    """Training-mode loss and analytic gradients with dropout off.

    Batch-norm uses the batch statistics (running stats untouched), which
    is the regime the finite-difference check runs in.
    """
    probs, cache = _forward_pass(model, X, train=True, drop_p=0.0)
    return _loss(probs, targets), _backward_pass(model, cache, probs, targets)


def forward(model: MlpModel, x, mode: str = "eval", rng=None):
    """Class probabilities for standardized input(s); rows sum to 1.

    Accepts a single vector or a batch. Train mode uses batch statistics
    and (if configured) dropout, which requires an rng.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    drop_p = model.config.dropout if mode == "train" else 0.0
    if drop_p > 0.0 and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    probs, _ = _forward_pass(model, X, train=(mode == "train"),
                             drop_p=drop_p, rng=rng)
    return probs[0] if single else probs


def predict_proba(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Xs = (X - model.scaler_mean) / model.scaler_std
    return forward(model, Xs, mode="eval")


# ---------------------------------------------------------------------------
# training


def _init_model(cfg: MlpConfig, n_features: int, n_classes: int, rng) -> MlpModel:
    h = cfg.hidden_size
    params = {
        "att_w": np.zeros(n_features),
        "att_b": np.zeros(n_features),
        "W1": rng.normal(0.0, np.sqrt(2.0 / n_features), (n_features, h)),
        "gamma1": np.ones(h),
        "beta1": np.zeros(h),
        "W2": rng.normal(0.0, np.sqrt(2.0 / h), (h, h)),
        "gamma2": np.ones(h),
        "beta2": np.zeros(h),
        "W3": rng.normal(0.0, np.sqrt(2.0 / h), (h, n_classes)),
        "b3": np.zeros(n_classes),
    }
    return MlpModel(
        config=cfg, n_features=n_features, n_classes=n_classes, params=params,
        running_mean1=np.zeros(h), running_var1=np.ones(h),
        running_mean2=np.zeros(h), running_var2=np.ones(h),
        scaler_mean=np.zeros(n_features), scaler_std=np.ones(n_features))


def train(X, y, cfg: MlpConfig, n_classes: int = None) -> MlpModel:
    """Fit on raw features; the standardizer is computed here and stored."""
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise ValueError("bad training data shapes")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise ValueError("need at least 2 classes")
    n, d = X.shape
    if n_classes is None:
        n_classes = int(y.max()) + 1

    rng = np.random.default_rng(cfg.seed)
    model = _init_model(cfg, d, n_classes, rng)
    model.scaler_mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    model.scaler_std = std
    Xs = (X - model.scaler_mean) / model.scaler_std
    targets = smoothed_targets(y, n_classes, cfg.label_smoothing)

    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            bidx = perm[lo: lo + cfg.batch_size]
            Xb, Tb = mixup_batch(Xs[bidx], targets[bidx], cfg.mixup_alpha, rng)
            probs, cache = _forward_pass(
                model, Xb, train=True, drop_p=cfg.dropout,
                rng=rng, update_running=True)
            loss = _loss(probs, Tb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * len(bidx)
            grads = _backward_pass(model, cache, probs, Tb)
            step += 1
            bc1 = 1.0 - ADAM_BETA1**step
            bc2 = 1.0 - ADAM_BETA2**step
            for name, g in grads.items():
                adam_m[name] = ADAM_BETA1 * adam_m[name] + (1 - ADAM_BETA1) * g
                adam_v[name] = ADAM_BETA2 * adam_v[name] + (1 - ADAM_BETA2) * g * g
                update = (adam_m[name] / bc1) / (np.sqrt(adam_v[name] / bc2) + ADAM_EPS)
                model.params[name] -= lr * update
                if cfg.weight_decay > 0 and name in _DECAYED:
                    model.params[name] -= lr * cfg.weight_decay * model.params[name]
        model.train_loss.append(epoch_loss / n)
    return model


def gradient_check(model: MlpModel, batch, step: float = 1e-5) -> float:
    """Max per-parameter-group relative error, analytic vs central differences.

    batch = (X, y) with at most 8 rows; dropout is forced off and
    batch-norm runs on batch statistics, matching loss_and_grads. Each
    group compares Euclidean norms, ||a - n|| / max(||a||, ||n||, 1e-8),
    so an irreducibly noisy finite difference on a single near-zero
    coordinate cannot mask or mimic a real backprop defect.
    """
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    if len(X) > 8:
        raise ValueError("gradient check batch must have <= 8 rows")
    targets = smoothed_targets(y, model.n_classes, 0.0)
    _, grads = loss_and_grads(model, X, targets)

    def loss_at():
        probs, _ = _forward_pass(model, X, train=True, drop_p=0.0)
        return _loss(probs, targets)

    max_rel = 0.0
    for name in _PARAM_NAMES:
        flat = model.params[name].reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_at()
            flat[i] = orig - step
            lm = loss_at()
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * step)
        analytic = grads[name].reshape(-1)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        max_rel = max(max_rel, np.linalg.norm(analytic - numeric) / denom)
    return max_rel


# ---------------------------------------------------------------------------
# serialization


def to_dict(model: MlpModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model_type": "attention_mlp",
        "config": asdict(model.config),
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "params": {k: v.tolist() for k, v in model.params.items()},
        "running_mean1": model.running_mean1.tolist(),
        "running_var1": model.running_var1.tolist(),
        "running_mean2": model.running_mean2.tolist(),
        "running_var2": model.running_var2.tolist(),
        "scaler_mean": model.scaler_mean.tolist(),
        "scaler_std": model.scaler_std.tolist(),
        "train_loss": list(model.train_loss),
    }


def from_dict(d: dict) -> MlpModel:
    if (d.get("schema_version") != MODEL_SCHEMA_VERSION
            or d.get("model_type") != "attention_mlp"):
        raise ValueError("not a recognized mlp model file")
    return MlpModel(
        config=MlpConfig(**d["config"]),
        n_features=int(d["n_features"]),
        n_classes=int(d["n_classes"]),
        params={k: np.asarray(v, np.float64) for k, v in d["params"].items()},
        running_mean1=np.asarray(d["running_mean1"], np.float64),
        running_var1=np.asarray(d["running_var1"], np.float64),
        running_mean2=np.asarray(d["running_mean2"], np.float64),
        running_var2=np.asarray(d["running_var2"], np.float64),
        scaler_mean=np.asarray(d["scaler_mean"], np.float64),
        scaler_std=np.asarray(d["scaler_std"], np.float64),
        train_loss=list(d["train_loss"]),
    )


def save(model: MlpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh, sort_keys=True, separators=(",", ":"))


def load(path) -> MlpModel:
    with open(path) as fh:
        return from_dict(json.load(fh))


__all__ = [
    "MlpConfig", "MlpModel", "TrainingDivergedError",
    "forward", "predict_proba", "train", "gradient_check",
    "loss_and_grads", "mixup_batch", "smoothed_targets",
    "cosine_lr", "gelu", "gelu_grad",
    "to_dict", "from_dict", "save", "load",
]
