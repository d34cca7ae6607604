"""Feedforward softmax classifiers trained with Adam on weighted cross-entropy.

Everything is plain numpy so training is bitwise deterministic given
(dataset order, config, seed): initialization, mini-batch shuffling, and
dropout masks all draw from a single generator seeded by the config.

The same trunk also serves the sampling-weight model, whose head mixes a
point mass at w = 1 (logistic) with a Beta mean on (0, 1) (sigmoid).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln

__all__ = [
    "NetworkConfig",
    "TrainingReport",
    "MLPParams",
    "NetworkTrainingError",
    "count_parameters",
    "formula_parameter_count",
    "init_params",
    "forward_probs",
    "weighted_cross_entropy",
    "loss_and_gradient",
    "flatten_params",
    "unflatten_params",
    "fit_softmax_network",
    "fit_weight_network",
    "weight_model_loss",
    "predict_weight",
]

PROB_CLIP = 1e-12
WEIGHT_BETA_DISPERSION = 5.0


class NetworkTrainingError(RuntimeError):
    """Non-finite loss encountered during training."""


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 0
    width: int = 16
    dropout: float = 0.0
    patience: int = 10
    max_epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.depth > 0 and self.width < 1:
            raise ValueError("width must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainingReport:
    train_losses: list[float] = field(default_factory=list)
    validation_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0


# Parameters are a list of (W, b) pairs; for depth 0 there is a single
# (W, None) since the design matrix's constant column carries the bias.
MLPParams = list


def count_parameters(cfg: NetworkConfig, n_inputs: int, n_classes: int = 4) -> int:
    """Exact number of trainable scalars in the implemented architecture."""
    if cfg.depth == 0:
        return n_inputs * n_classes
    total = n_inputs * cfg.width + cfg.width
    total += (cfg.depth - 1) * (cfg.width * cfg.width + cfg.width)
    total += cfg.width * n_classes + n_classes
    return total


def formula_parameter_count(cfg: NetworkConfig, n_inputs: int) -> int:
    """The headline parameter count n_X*W + (D-1)*W^2 + 3W (3*n_X for D=0),
    reported separately because it does not count the implemented tensors."""
    if cfg.depth == 0:
        return 3 * n_inputs
    return n_inputs * cfg.width + (cfg.depth - 1) * cfg.width**2 + 3 * cfg.width


def init_params(
    cfg: NetworkConfig, n_inputs: int, n_outputs: int, rng: np.random.Generator
) -> MLPParams:
    """Uniform initialization scaled by fan-in/fan-out."""
    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    if cfg.depth == 0:
        return [(glorot(n_inputs, n_outputs), None)]
    params: MLPParams = [(glorot(n_inputs, cfg.width), np.zeros(cfg.width))]
    for _ in range(cfg.depth - 1):
        params.append((glorot(cfg.width, cfg.width), np.zeros(cfg.width)))
    params.append((glorot(cfg.width, n_outputs), np.zeros(n_outputs)))
    return params


def _forward(
    params: MLPParams, X: np.ndarray, dropout_masks: Sequence[np.ndarray] | None = None
):
    """Returns (scores, cached hidden activations)."""
    h = X
    hiddens = [h]
    for i, (W, b) in enumerate(params[:-1]):
        z = h @ W + b
        h = np.maximum(z, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
        hiddens.append(h)
    W, b = params[-1]
    scores = h @ W if b is None else h @ W + b
    return scores, hiddens


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_probs(params: MLPParams, X: np.ndarray) -> np.ndarray:
    scores, _ = _forward(params, X)
    return _softmax(scores)


def weighted_cross_entropy(
    probs: np.ndarray, labels: np.ndarray, w: np.ndarray
) -> float:
    """Negated weighted log-likelihood per unit weight."""
    picked = np.clip(probs[np.arange(len(labels)), labels], PROB_CLIP, None)
    return float(-np.sum(w * np.log(picked)) / np.sum(w))


def _backward(
    params: MLPParams,
    hiddens: list[np.ndarray],
    dscores: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> MLPParams:
    grads: MLPParams = [None] * len(params)
    W, b = params[-1]
    grads[-1] = (hiddens[-1].T @ dscores, None if b is None else dscores.sum(axis=0))
    dh = dscores @ W.T
    for i in range(len(params) - 2, -1, -1):
        if dropout_masks is not None:
            dh = dh * dropout_masks[i]
        dz = dh * (hiddens[i + 1] > 0.0)
        W, _ = params[i]
        grads[i] = (hiddens[i].T @ dz, dz.sum(axis=0))
        dh = dz @ W.T
    return grads


def loss_and_gradient(
    params: MLPParams, X: np.ndarray, labels: np.ndarray, w: np.ndarray
) -> tuple[float, MLPParams]:
    """Weighted cross-entropy (per unit weight) and its backpropagated
    gradient, without dropout."""
    scores, hiddens = _forward(params, X)
    probs = _softmax(scores)
    loss = weighted_cross_entropy(probs, labels, w)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    dscores = (probs - onehot) * (w / np.sum(w))[:, None]
    return loss, _backward(params, hiddens, dscores)


def flatten_params(params: MLPParams) -> np.ndarray:
    parts = []
    for W, b in params:
        parts.append(W.ravel())
        if b is not None:
            parts.append(b.ravel())
    return np.concatenate(parts)


def unflatten_params(flat: np.ndarray, template: MLPParams) -> MLPParams:
    out: MLPParams = []
    pos = 0
    for W, b in template:
        w_new = flat[pos : pos + W.size].reshape(W.shape)
        pos += W.size
        b_new = None
        if b is not None:
            b_new = flat[pos : pos + b.size].reshape(b.shape)
            pos += b.size
        out.append((w_new, b_new))
    return out


def _copy_params(params: MLPParams) -> MLPParams:
    return [(W.copy(), None if b is None else b.copy()) for W, b in params]


class _Adam:
    def __init__(self, params: MLPParams, cfg: NetworkConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [(np.zeros_like(W), None if b is None else np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), None if b is None else np.zeros_like(b)) for W, b in params]

    def step(self, params: MLPParams, grads: MLPParams) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for i, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
            mW, mb = self.m[i]
            vW, vb = self.v[i]
            mW *= cfg.beta1
            mW += (1 - cfg.beta1) * gW
            vW *= cfg.beta2
            vW += (1 - cfg.beta2) * gW**2
            W -= cfg.learning_rate * (mW / bc1) / (np.sqrt(vW / bc2) + cfg.adam_eps)
            if b is not None:
                mb *= cfg.beta1
                mb += (1 - cfg.beta1) * gb
                vb *= cfg.beta2
                vb += (1 - cfg.beta2) * gb**2
                b -= cfg.learning_rate * (mb / bc1) / (np.sqrt(vb / bc2) + cfg.adam_eps)


def _train_loop(cfg, params, n_train, batch_grad_fn, eval_fn, rng):
    """Shared mini-batch Adam loop with patience-based early stopping.

    batch_grad_fn(params, batch_idx, dropout_masks) -> grads
    eval_fn(params) -> (train_loss, validation_loss)
    Returns (best_params, TrainingReport).
    """
    adam = _Adam(params, cfg)
    report = TrainingReport()
    best_val = math.inf
    best_params = _copy_params(params)
    since_best = 0
    use_dropout = cfg.depth > 0 and cfg.dropout > 0.0
    keep = 1.0 - cfg.dropout

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            masks = None
            if use_dropout:
                masks = [
                    (rng.random((len(batch), cfg.width)) < keep) / keep
                    for _ in range(cfg.depth)
                ]
            grads = batch_grad_fn(params, batch, masks)
            adam.step(params, grads)

        train_loss, val_loss = eval_fn(params)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NetworkTrainingError(f"non-finite loss at epoch {epoch + 1}")
        report.train_losses.append(train_loss)
        report.validation_losses.append(val_loss)
        report.epochs_run = epoch + 1
        if val_loss < best_val:
            best_val = val_loss
            best_params = _copy_params(params)
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_params, report


def fit_softmax_network(
    X_train: np.ndarray,
    labels_train: np.ndarray,
    w_train: np.ndarray,
    X_val: np.ndarray,
    labels_val: np.ndarray,
    w_val: np.ndarray,
    cfg: NetworkConfig,
    n_classes: int,
) -> tuple[MLPParams, TrainingReport]:
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, X_train.shape[1], n_classes, rng)

    def batch_grad(params, batch, masks):
        X = X_train[batch]
        y = labels_train[batch]
        w = w_train[batch]
        scores, hiddens = _forward(params, X, masks)
        probs = _softmax(scores)
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(y)), y] = 1.0
        dscores = (probs - onehot) * (w / np.sum(w))[:, None]
        return _backward(params, hiddens, dscores, masks)

    def evaluate(params):
        tr = weighted_cross_entropy(forward_probs(params, X_train), labels_train, w_train)
        va = weighted_cross_entropy(forward_probs(params, X_val), labels_val, w_val)
        return tr, va

    return _train_loop(cfg, params, len(labels_train), batch_grad, evaluate, rng)


# ---------------------------------------------------------------------------
# Sampling-weight model: point mass at w = 1 plus a Beta component on (0, 1)


def _weight_head(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pi = 1.0 / (1.0 + np.exp(-scores[:, 0]))
    m = 1.0 / (1.0 + np.exp(-scores[:, 1]))
    m = np.clip(m, 1e-6, 1.0 - 1e-6)
    pi = np.clip(pi, 1e-12, 1.0 - 1e-12)
    return pi, m


def _beta_loglik(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    phi = WEIGHT_BETA_DISPERSION
    a = m * phi
    b = (1.0 - m) * phi
    return (
        (a - 1.0) * np.log(w)
        + (b - 1.0) * np.log1p(-w)
        + gammaln(phi)
        - gammaln(a)
        - gammaln(b)
    )


def weight_model_loss(params: MLPParams, X: np.ndarray, w: np.ndarray) -> float:
    """Mean negative log-likelihood of the mass-point/Beta mixture."""
    scores, _ = _forward(params, X)
    pi, m = _weight_head(scores)
    at_one = w >= 1.0
    ll = np.where(at_one, np.log(pi), np.log1p(-pi) + _beta_loglik(np.clip(w, 1e-12, 1 - 1e-12), m))
    return float(-np.mean(ll))


def weight_model_gradient(
    params: MLPParams,
    X: np.ndarray,
    w: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> MLPParams:
    """Backpropagated gradient of weight_model_loss."""
    phi = WEIGHT_BETA_DISPERSION
    scores, hiddens = _forward(params, X, dropout_masks)
    pi, m = _weight_head(scores)
    at_one = w >= 1.0
    wc = np.clip(w, 1e-12, 1.0 - 1e-12)
    dscores = np.zeros_like(scores)
    # d(-ll)/d logit(pi); sigmoid derivative folds into (pi - indicator)
    dscores[:, 0] = pi - at_one
    dll_dm = phi * (
        np.log(wc) - np.log1p(-wc) - digamma(m * phi) + digamma((1.0 - m) * phi)
    )
    dscores[:, 1] = np.where(at_one, 0.0, -dll_dm * m * (1.0 - m))
    dscores /= len(w)
    return _backward(params, hiddens, dscores, dropout_masks)


def fit_weight_network(
    X_train: np.ndarray,
    w_train: np.ndarray,
    X_val: np.ndarray,
    w_val: np.ndarray,
    cfg: NetworkConfig,
) -> tuple[MLPParams, TrainingReport]:
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, X_train.shape[1], 2, rng)

    def batch_grad(params, batch, masks):
        return weight_model_gradient(params, X_train[batch], w_train[batch], masks)

    def evaluate(params):
        return (
            weight_model_loss(params, X_train, w_train),
            weight_model_loss(params, X_val, w_val),
        )

    return _train_loop(cfg, params, len(w_train), batch_grad, evaluate, rng)


def predict_weight(params: MLPParams, X: np.ndarray) -> np.ndarray:
    """Expected weight: pi * 1 + (1 - pi) * m."""
    scores, _ = _forward(params, X)
    pi, m = _weight_head(scores)
    return pi + (1.0 - pi) * m
