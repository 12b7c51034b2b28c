"""Worst-case neighbours for uniform individual fairness.

For each row ``x`` we look for ``v`` on the L2 sphere of radius ``epsilon``
(continuous coordinates only) that maximises ``|f(x) - f(v)|``.  The
direction is refined by power iteration as in virtual adversarial training:
the gradient of ``|f(x) - f(x + xi u)|`` with respect to ``u`` replaces the
KL-divergence gradient.  For a linear model one iteration returns the exact
maximiser; near a stationary point the iteration tracks the dominant Hessian
eigenvector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import as_generator


class NoPerturbableFeaturesError(ValueError):
    pass


@dataclass(frozen=True)
class AdversaryConfig:
    epsilon: float = 0.1
    xi: float | None = None
    power_iters: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")

    def probe_scale(self, d: int) -> float:
        return self.xi if self.xi is not None else 1e-6 * np.sqrt(d)


def _normalize(u, fallback=None):
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    bad = norms[:, 0] == 0
    out = np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)
    if fallback is not None and bad.any():
        out[bad] = fallback[bad]
    return out


def _model_fns(model):
    if hasattr(model, "input_grad"):
        return model.forward, model.input_grad
    score_fn, grad_fn = model
    return score_fn, grad_fn


def adversarial_input(model, X, config: AdversaryConfig = AdversaryConfig(), mask=None, rng=None,
                      return_initial=False):
    """Return ``V`` with ``||V_i - X_i||_2 = epsilon`` over the perturbable coordinates.

    ``model`` is either an object with ``forward`` and ``input_grad`` methods
    (e.g. :class:`~slidefair.nn_core.ModelParams`) or a pair
    ``(score_fn, grad_fn)``.  ``mask`` flags perturbable columns; one-hot
    columns should be left out so they stay frozen.  With ``return_initial``
    the random starting directions are returned as well.
    """
    f, grad = _model_fns(model)
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    n, d = X.shape
    mask = np.ones(d, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise NoPerturbableFeaturesError("all input coordinates are frozen; nothing to perturb")
    rng = as_generator(config.seed if rng is None else rng)
    xi = config.probe_scale(int(mask.sum()))

    u = np.zeros((n, d))
    u[:, mask] = rng.standard_normal((n, int(mask.sum())))
    u = _normalize(u)
    u0 = u.copy()
    fx = f(X)
    for _ in range(config.power_iters):
        probe = X + xi * u
        sign = np.sign(f(probe) - fx)
        g = sign[:, None] * grad(probe)
        g[:, ~mask] = 0.0
        u = _normalize(g, fallback=u)
    # |.| is symmetric, so keep whichever of +u / -u moves the score more
    vp, vm = X + config.epsilon * u, X - config.epsilon * u
    keep_plus = np.abs(f(vp) - fx) >= np.abs(f(vm) - fx)
    V = np.where(keep_plus[:, None], vp, vm)
    V[:, ~mask] = X[:, ~mask]
    if squeeze:
        V, u0 = V[0], u0[0]
    return (V, u0) if return_initial else V


def random_neighbor(X, config: AdversaryConfig, mask=None, rng=None):
    """Random point on the same epsilon-sphere; the baseline for the ascent property."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    mask = np.ones(d, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rng = as_generator(config.seed if rng is None else rng)
    u = np.zeros((n, d))
    u[:, mask] = rng.standard_normal((n, int(mask.sum())))
    return X + config.epsilon * _normalize(u)
