"""Mini-batch training of linear and MLP classifiers on softmax cross-entropy."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import Classifier, _act, _act_grad, init_mlp, linear_classifier


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    sharpness: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        """``linear`` or ``mlp:64x64:tanh`` (activation optional)."""
        parts = text.split(":")
        if parts[0] == "linear" and len(parts) == 1:
            return cls("linear", ())
        if parts[0] == "mlp" and 2 <= len(parts) <= 3:
            hidden = tuple(int(h) for h in parts[1].split("x") if h)
            act = parts[2] if len(parts) == 3 else "tanh"
            return cls("mlp", hidden, act)
        raise ValueError(f"cannot parse model spec {text!r}; expected 'linear' or 'mlp:64x64:tanh'")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.05
    optimizer: str = "momentum"
    momentum: float = 0.9
    weight_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("plain-gradient", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or not self.weight_scale > 0:
            raise ValueError("epochs, batch size, step size and weight scale must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def init_model(spec: ModelSpec, d: int, L: int, rng, weight_scale: float = 1.0) -> Classifier:
    if spec.kind == "linear":
        return linear_classifier(rng.standard_normal((d, L)) * weight_scale / np.sqrt(d))
    if spec.kind == "mlp":
        return init_mlp([d, *spec.hidden, L], rng, spec.activation, weight_scale, spec.sharpness)
    raise ValueError(f"cannot train a {spec.kind!r} model")


def _loss_and_grad(clf: Classifier, X, y):
    """Mean cross-entropy and its gradient in the flat parameter layout."""
    n = len(y)
    if clf.kind == "linear":
        W, b = clf.unpack()
        out = X @ W + b
        acts, pre = [X], []
    else:
        blocks = clf.unpack()
        h, acts, pre = X, [X], []
        n_layers = len(blocks) // 2
        for k in range(n_layers):
            a = h @ blocks[2 * k].T + blocks[2 * k + 1]
            if k == n_layers - 1:
                out = a
                break
            pre.append(a)
            h = _act(clf, a)
            acts.append(h)

    shifted = out - out.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    if clf.kind == "linear":
        gW = X.T @ delta  # d x L
        return loss, np.concatenate([gW.T.ravel(), delta.sum(axis=0)])

    grads = []
    for k in range(len(blocks) // 2 - 1, -1, -1):
        gW = delta.T @ acts[k]
        grads = [gW.ravel(), delta.sum(axis=0)] + grads
        if k > 0:
            delta = (delta @ blocks[2 * k]) * _act_grad(clf, pre[k - 1])
    return loss, np.concatenate(grads)


def accuracy(clf: Classifier, X, y) -> float:
    from .model import predict

    return float(np.mean(predict(clf, X) == y))


def train(spec: ModelSpec, dataset, config: TrainConfig) -> Classifier:
    """Fit a classifier with mini-batch gradient descent.

    Gradients are accumulated in one fixed order so a seed determines the
    parameters bit for bit.  The returned model records the seed, the final
    train accuracy and the per-epoch loss curve in its metadata.
    """
    X, y = dataset.points, dataset.labels
    L = dataset.config.L
    rng = np.random.default_rng(config.seed)
    clf = init_model(spec, X.shape[1], L, rng, config.weight_scale)
    params = clf.params.copy()
    velocity = np.zeros_like(params)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grad = _loss_and_grad(clf, X[idx], y[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"training diverged in epoch {epoch}")
            total += loss * len(idx)
            if config.optimizer == "momentum":
                velocity = config.momentum * velocity - config.lr * grad
                params = params + velocity
            else:
                params = params - config.lr * grad
            if not np.all(np.isfinite(params)):
                raise TrainingError(f"training diverged in epoch {epoch}")
            clf = clf.with_params(params)
        curve.append(total / len(y))
    meta = {
        "train_accuracy": accuracy(clf, X, y),
        "loss_curve": curve,
        "train_config": asdict(config),
    }
    return clf.with_params(params, seed=config.seed, meta=meta)
