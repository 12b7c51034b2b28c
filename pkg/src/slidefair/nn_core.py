"""Dense scoring models with analytic gradients, logistic loss and Adam.

Two architectures are supported: ``linear(d)`` with ``f(x) = <w, x> + b`` and
``mlp(d, h)`` with one ReLU hidden layer and a single real output score.  A
two-logit softmax head for binary labels is equivalent to one score trained
with the logistic loss, so only the single score is modelled.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


_PARAM_NAMES = {"linear": ("w", "b"), "mlp": ("W1", "b1", "w2", "b2")}


@dataclass(eq=False)
class ModelParams:
    architecture: str
    d: int
    weights: dict
    hidden_width: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.architecture not in _PARAM_NAMES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "mlp" and self.hidden_width <= 0:
            raise ValueError("mlp hidden_width must be positive")
        self.weights = {k: np.asarray(self.weights[k], dtype=float) for k in _PARAM_NAMES[self.architecture]}

    @property
    def names(self):
        return _PARAM_NAMES[self.architecture]

    @property
    def n_params(self) -> int:
        return int(sum(self.weights[k].size for k in self.names))

    def copy(self) -> "ModelParams":
        return ModelParams(self.architecture, self.d, {k: v.copy() for k, v in self.weights.items()},
                           self.hidden_width, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in self.names])

    def with_flat(self, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        out, i = {}, 0
        for k in self.names:
            shape = self.weights[k].shape
            size = int(np.prod(shape))
            out[k] = theta[i:i + size].reshape(shape).copy()
            i += size
        return ModelParams(self.architecture, self.d, out, self.hidden_width, self.seed)

    # convenience methods mirroring the module-level functions
    def forward(self, X):
        return forward(self, X)

    def backward(self, X, upstream):
        return backward(self, X, upstream)

    def input_grad(self, X):
        return input_grad(self, X)

    def to_json(self) -> str:
        return dumps_model(self)


def init_params(architecture: str, d: int, hidden_width: int = 0, seed=0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = as_generator(seed)
    if architecture == "linear":
        a = np.sqrt(6.0 / (d + 1))
        weights = {"w": rng.uniform(-a, a, size=d), "b": np.zeros(())}
    elif architecture == "mlp":
        a1 = np.sqrt(6.0 / (d + hidden_width))
        a2 = np.sqrt(6.0 / (hidden_width + 1))
        weights = {
            "W1": rng.uniform(-a1, a1, size=(d, hidden_width)),
            "b1": np.zeros(hidden_width),
            "w2": rng.uniform(-a2, a2, size=hidden_width),
            "b2": np.zeros(()),
        }
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    return ModelParams(architecture, d, weights, hidden_width, seed if isinstance(seed, int) else None)


def _check_X(params: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.d:
        got = X.shape[1] if X.ndim == 2 else X.shape
        raise ShapeError(f"feature dimension mismatch: expected d={params.d}, got {got}")
    return X


def forward(params: ModelParams, X) -> np.ndarray:
    X = _check_X(params, X)
    w = params.weights
    if params.architecture == "linear":
        return X @ w["w"] + w["b"]
    h = np.maximum(X @ w["W1"] + w["b1"], 0.0)
    return h @ w["w2"] + w["b2"]


def backward(params: ModelParams, X, upstream) -> dict:
    """Gradient of ``sum_i upstream_i * f(x_i)`` with respect to every parameter."""
    X = _check_X(params, X)
    u = np.asarray(upstream, dtype=float)
    if u.shape != (X.shape[0],):
        raise ShapeError(f"upstream has shape {u.shape}, expected ({X.shape[0]},)")
    w = params.weights
    if params.architecture == "linear":
        return {"w": X.T @ u, "b": np.asarray(u.sum())}
    pre = X @ w["W1"] + w["b1"]
    h = np.maximum(pre, 0.0)
    dh = np.outer(u, w["w2"]) * (pre > 0)
    return {"W1": X.T @ dh, "b1": dh.sum(axis=0), "w2": h.T @ u, "b2": np.asarray(u.sum())}


def input_grad(params: ModelParams, X) -> np.ndarray:
    """Per-row gradient of the score with respect to the input, shape (n, d)."""
    X = _check_X(params, X)
    w = params.weights
    if params.architecture == "linear":
        return np.broadcast_to(w["w"], X.shape).copy()
    pre = X @ w["W1"] + w["b1"]
    return ((pre > 0) * w["w2"]) @ w["W1"].T


def add_grads(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in a}


def logistic_loss(scores, y):
    """Mean of ``log(1 + exp(-y f))`` and its per-sample derivative in ``f``."""
    f = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all((y == 1) | (y == -1)):
        bad = np.unique(y[(y != 1) & (y != -1)])
        raise ValueError(f"labels must be in {{-1, +1}}, found {bad[:5]}")
    n = f.shape[0]
    m = -y * f
    loss = np.logaddexp(0.0, m).mean()
    # sigmoid(m) without overflow
    sig = np.where(m >= 0, 1.0 / (1.0 + np.exp(-np.abs(m))), np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))))
    return float(loss), -y * sig / n


@dataclass
class AdamState:
    lr: float
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    decay_every: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def current_lr(self) -> float:
        if self.decay_every <= 0:
            return self.lr
        return self.lr * 0.5 ** (self.t // self.decay_every)


def adam_step(params: ModelParams, grads: dict, state: AdamState) -> ModelParams:
    """One Adam update.  Mutates ``state``; returns new parameters."""
    for k in params.names:
        g = np.asarray(grads[k], dtype=float)
        if g.shape != params.weights[k].shape:
            raise ShapeError(f"gradient for {k!r} has shape {g.shape}, expected {params.weights[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(k)
    lr = state.current_lr()
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    new = {}
    for k in params.names:
        g = np.asarray(grads[k], dtype=float)
        m = b1 * state.m.get(k, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new[k] = params.weights[k] - lr * mhat / (np.sqrt(vhat) + state.eps)
    return ModelParams(params.architecture, params.d, new, params.hidden_width, params.seed)


# checkpoints -------------------------------------------------------------

def model_to_dict(params: ModelParams) -> dict:
    # repr() of a Python float is the shortest string that round-trips exactly
    return {
        "architecture": params.architecture,
        "d": params.d,
        "hidden_width": params.hidden_width,
        "seed": params.seed,
        "weights": {k: {"shape": list(params.weights[k].shape),
                        "data": [float(x) for x in params.weights[k].ravel()]}
                    for k in params.names},
    }


def model_from_dict(obj: dict) -> ModelParams:
    weights = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj["weights"].items()}
    return ModelParams(obj["architecture"], int(obj["d"]), weights, int(obj.get("hidden_width", 0)), obj.get("seed"))


def dumps_model(params: ModelParams) -> str:
    return json.dumps(model_to_dict(params))


def loads_model(text: str) -> ModelParams:
    return model_from_dict(json.loads(text))


def save_model(params: ModelParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(params))


def load_model(path) -> ModelParams:
    with open(path) as fh:
        return loads_model(fh.read())
