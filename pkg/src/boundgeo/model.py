"""Differentiable classifiers: logits, pair margins, gradients and Hessian-vector products.

Three model families share one flat parameter vector layout:

* ``linear``: ``W`` (d x L, column-major) followed by the bias (L).
  Logits are ``W.T @ x + b``.
* ``sphere``: center (d) followed by the radius (1).  Two classes with
  logits ``(R - ||x - c||, 0)``, so class 0 is the ball interior.
* ``mlp``: for every layer the weights (out x in, row-major) then the bias
  (out).  Hidden layers use a smooth activation (tanh or softplus).

All functions accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)`` and return arrays with the matching leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

KINDS = ("linear", "sphere", "mlp")
ACTIVATIONS = ("tanh", "softplus")

_SQRT_EPS = np.sqrt(np.finfo(np.float64).eps)


class ModelError(ValueError):
    """Raised for malformed classifiers or inputs of the wrong shape."""


@dataclass(frozen=True, eq=False)
class Classifier:
    kind: str
    input_dim: int
    num_classes: int
    params: np.ndarray
    layer_sizes: tuple[int, ...] = ()
    activation: str | None = None
    sharpness: float = 1.0
    seed: int = -1
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown classifier kind {self.kind!r}")
        if self.input_dim < 1:
            raise ModelError("input_dim must be positive")
        if self.num_classes < 2:
            raise ModelError("num_classes must be at least 2")
        params = np.array(self.params, dtype=np.float64).ravel()
        if not np.all(np.isfinite(params)):
            raise ModelError("parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

        if self.kind == "mlp":
            if self.activation not in ACTIVATIONS:
                raise ModelError(
                    f"mlp activation must be one of {ACTIVATIONS} (twice differentiable), "
                    f"got {self.activation!r}"
                )
            if not self.sharpness > 0:
                raise ModelError("softplus sharpness must be positive")
            sizes = self.layer_sizes
            if len(sizes) < 2 or sizes[0] != self.input_dim or sizes[-1] != self.num_classes:
                raise ModelError(f"layer sizes {sizes} do not match d={self.input_dim}, L={self.num_classes}")
        elif self.kind == "sphere" and self.num_classes != 2:
            raise ModelError("sphere classifier has exactly two classes")

        expected = sum(self.layout())
        if params.size != expected:
            raise ModelError(f"parameter array has {params.size} entries, layout needs {expected}")
        if self.kind == "sphere" and not params[-1] > 0:
            raise ModelError("sphere radius must be positive")

    def layout(self) -> list[int]:
        """Lengths of the consecutive parameter blocks."""
        d, L = self.input_dim, self.num_classes
        if self.kind == "linear":
            return [d * L, L]
        if self.kind == "sphere":
            return [d, 1]
        blocks = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            blocks += [fan_out * fan_in, fan_out]
        return blocks

    def unpack(self) -> list[np.ndarray]:
        """Parameter blocks as read-only views with their natural shapes."""
        offsets = np.cumsum([0] + self.layout())
        chunks = [self.params[a:b] for a, b in zip(offsets[:-1], offsets[1:])]
        if self.kind == "linear":
            W = chunks[0].reshape(self.num_classes, self.input_dim).T
            return [W, chunks[1]]
        if self.kind == "sphere":
            return [chunks[0], chunks[1]]
        out = []
        for k, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            out += [chunks[2 * k].reshape(fan_out, fan_in), chunks[2 * k + 1]]
        return out

    def with_params(self, params: np.ndarray, **changes) -> "Classifier":
        kw = dict(
            kind=self.kind, input_dim=self.input_dim, num_classes=self.num_classes,
            params=params, layer_sizes=self.layer_sizes, activation=self.activation,
            sharpness=self.sharpness, seed=self.seed, meta=dict(self.meta),
        )
        kw.update(changes)
        return Classifier(**kw)


def linear_classifier(W, b=None) -> Classifier:
    W = np.asarray(W, dtype=np.float64)
    d, L = W.shape
    b = np.zeros(L) if b is None else np.asarray(b, dtype=np.float64)
    return Classifier("linear", d, L, np.concatenate([W.T.ravel(), b]))


def sphere_classifier(center, radius: float) -> Classifier:
    center = np.asarray(center, dtype=np.float64)
    return Classifier("sphere", center.size, 2, np.concatenate([center, [radius]]))


def mlp_classifier(weights, biases, activation="tanh", sharpness=1.0) -> Classifier:
    sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    flat = []
    for W, b in zip(weights, biases):
        flat += [np.asarray(W, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64)]
    return Classifier(
        "mlp", sizes[0], sizes[-1], np.concatenate(flat),
        layer_sizes=tuple(sizes), activation=activation, sharpness=sharpness,
    )


def init_mlp(sizes, rng, activation="tanh", weight_scale=1.0, sharpness=1.0) -> Classifier:
    """Random MLP with fan-in scaled Gaussian weights and zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * weight_scale / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return mlp_classifier(weights, biases, activation, sharpness)


# -- activations --------------------------------------------------------------

def _act(clf, a):
    if clf.activation == "tanh":
        return np.tanh(a)
    s = clf.sharpness
    return np.logaddexp(0.0, s * a) / s


def _act_grad(clf, a):
    if clf.activation == "tanh":
        return 1.0 - np.tanh(a) ** 2
    return 0.5 * (1.0 + np.tanh(0.5 * clf.sharpness * a))  # logistic(s a), overflow-free


# -- forward / backward -------------------------------------------------------

def _as_batch(clf, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != clf.input_dim:
        raise ModelError(f"expected input of dimension {clf.input_dim}, got shape {x.shape}")
    return X, single


def _mlp_forward(clf, X):
    """Returns output logits and (pre-activation, activation) pairs of the hidden layers."""
    blocks = clf.unpack()
    hidden = []
    h = X
    n_layers = len(blocks) // 2
    for k in range(n_layers):
        W, b = blocks[2 * k], blocks[2 * k + 1]
        a = h @ W.T + b
        if k == n_layers - 1:
            return a, hidden
        h = _act(clf, a)
        hidden.append((a, h))


def _act_grad_cached(clf, a, h):
    if clf.activation == "tanh":
        return 1.0 - h * h
    return _act_grad(clf, a)


def _mlp_backward_input(clf, hidden, seed):
    """Input gradient of ``seed . f(x)`` for each row; ``seed`` is (n, L)."""
    blocks = clf.unpack()
    n_layers = len(blocks) // 2
    delta = seed
    for k in range(n_layers - 1, -1, -1):
        g = delta @ blocks[2 * k]
        if k == 0:
            return g
        delta = g * _act_grad_cached(clf, *hidden[k - 1])


def logits(clf: Classifier, x) -> np.ndarray:
    X, single = _as_batch(clf, x)
    if clf.kind == "linear":
        W, b = clf.unpack()
        out = X @ W + b
    elif clf.kind == "sphere":
        c, R = clf.unpack()
        out = np.zeros((X.shape[0], 2))
        out[:, 0] = R[0] - np.linalg.norm(X - c, axis=1)
    else:
        out, _ = _mlp_forward(clf, X)
    return out[0] if single else out


def predict(clf: Classifier, x) -> np.ndarray | int:
    """Arg-max class; ``np.argmax`` already breaks ties toward the lowest index."""
    out = np.argmax(logits(clf, x), axis=-1)
    return int(out) if out.ndim == 0 else out


def logit_gradients(clf: Classifier, x, seed) -> np.ndarray:
    """Gradient of ``seed . logits(x)`` with respect to x (reverse mode)."""
    X, single = _as_batch(clf, x)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.ndim == 1:
        seed = np.broadcast_to(seed, (X.shape[0], clf.num_classes))
    if clf.kind == "linear":
        W, _ = clf.unpack()
        G = seed @ W.T
    elif clf.kind == "sphere":
        c, _ = clf.unpack()
        diff = X - c
        norm = np.linalg.norm(diff, axis=1, keepdims=True)
        unit = np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
        G = -seed[:, :1] * unit
    else:
        _, hidden = _mlp_forward(clf, X)
        G = _mlp_backward_input(clf, hidden, seed)
    return G[0] if single else G


@dataclass(frozen=True)
class PairFunction:
    """Margin ``F = f_i - f_j`` between two classes; the boundary is ``F = 0``."""

    clf: Classifier
    class_i: int
    class_j: int

    def __post_init__(self):
        L = self.clf.num_classes
        if not (0 <= self.class_i < L and 0 <= self.class_j < L):
            raise ModelError("class index out of range")
        if self.class_i == self.class_j:
            raise ModelError("pair function needs two distinct classes")

    @property
    def seed(self) -> np.ndarray:
        s = np.zeros(self.clf.num_classes)
        s[self.class_i], s[self.class_j] = 1.0, -1.0
        return s

    def value(self, x):
        out = logits(self.clf, x)
        return out[..., self.class_i] - out[..., self.class_j]

    def reversed(self) -> "PairFunction":
        return PairFunction(self.clf, self.class_j, self.class_i)


def pair_gradient(pf: PairFunction, x) -> np.ndarray:
    return logit_gradients(pf.clf, x, pf.seed)


def fd_hvp(grad, z, U) -> np.ndarray:
    """Hessian-vector products by central differences of an analytic gradient.

    ``U`` is a single vector (d,) or a block (k, d) of vectors; the step for
    each vector is ``sqrt(eps) * (1 + ||z||) / max(||u||, 1)``.  Zero vectors
    map to zero without evaluating anything.
    """
    z = np.asarray(z, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    single = U.ndim == 1
    U = U[None, :] if single else U
    norms = np.linalg.norm(U, axis=1)
    out = np.zeros_like(U)
    live = norms > 0
    if np.any(live):
        h = _SQRT_EPS * (1.0 + np.linalg.norm(z)) / np.maximum(norms[live], 1.0)
        step = h[:, None] * U[live]
        G = grad(np.concatenate([z + step, z - step]))
        k = step.shape[0]
        out[live] = (G[:k] - G[k:]) / (2.0 * h[:, None])
    return out[0] if single else out


def pair_hvp(pf: PairFunction, z, u) -> np.ndarray:
    return fd_hvp(lambda P: pair_gradient(pf, P), z, u)


def hvp_batch(clf: Classifier, seeds, Z, U) -> np.ndarray:
    """``H_i u_{ik}`` where ``H_i`` is the Hessian of ``seeds[i] . logits`` at ``Z[i]``.

    ``seeds`` is (n, L), ``Z`` is (n, d) and ``U`` is (n, k, d).  All the
    finite-difference evaluations go through the model in one batched call.
    """
    Z = np.asarray(Z, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    n, k, d = U.shape
    norms = np.linalg.norm(U, axis=2)
    h = _SQRT_EPS * (1.0 + np.linalg.norm(Z, axis=1))[:, None] / np.maximum(norms, 1.0)
    step = (h[..., None] * U).reshape(n * k, d)
    base = np.repeat(Z, k, axis=0)
    S = np.repeat(np.asarray(seeds, dtype=np.float64), k, axis=0)
    G = logit_gradients(clf, np.concatenate([base + step, base - step]), np.concatenate([S, S]))
    out = (G[: n * k] - G[n * k:]).reshape(n, k, d) / (2.0 * h[..., None])
    out[norms == 0] = 0.0
    return out
