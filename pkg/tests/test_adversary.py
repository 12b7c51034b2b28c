import numpy as np
import pytest

from slidefair.adversary import AdversaryConfig, NoPerturbableFeaturesError, adversarial_input, random_neighbor
from slidefair.nn_core import init_params


def test_constant_model_any_direction():
    f = (lambda X: np.zeros(len(X)), lambda X: np.zeros_like(X))
    X = np.random.default_rng(0).normal(size=(5, 3))
    V = adversarial_input(f, X, AdversaryConfig(epsilon=0.3, seed=1))
    np.testing.assert_allclose(np.linalg.norm(V - X, axis=1), 0.3, atol=1e-12)


def test_linear_model_aligns_with_weights():
    p = init_params("linear", 6, seed=4)
    X = np.random.default_rng(1).normal(size=(40, 6))
    V = adversarial_input(p, X, AdversaryConfig(epsilon=0.2, power_iters=1, seed=0))
    w = p.weights["w"] / np.linalg.norm(p.weights["w"])
    cos = np.abs((V - X) @ w) / 0.2
    assert cos.min() >= 0.99


def test_quadratic_dominant_eigenvector():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    A = Q @ np.diag([10.0, 1.0, 0.5, -0.2]) @ Q.T
    score = lambda X: np.einsum("ij,jk,ik->i", X, A, X)
    # oracle: eigenvector of a finite-difference Hessian at 0
    h, H = 1e-4, np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            ei, ej = np.eye(4)[i] * h, np.eye(4)[j] * h
            H[i, j] = (score((ei + ej)[None]) - score((ei - ej)[None]) - score((ej - ei)[None])
                       + score((-ei - ej)[None]))[0] / (4 * h * h)
    vals, vecs = np.linalg.eigh(H)
    top = vecs[:, np.argmax(np.abs(vals))]
    X = np.zeros((20, 4))
    V = adversarial_input((score, lambda X: 2 * X @ A), X, AdversaryConfig(epsilon=1.0, xi=1e-3, power_iters=3, seed=5))
    assert np.abs(V @ top).min() >= 0.95


def test_norm_and_frozen_columns():
    p = init_params("mlp", 5, 8, seed=2)
    rng = np.random.default_rng(7)
    X = rng.normal(size=(30, 5))
    X[:, 3:] = rng.integers(0, 2, (30, 2))
    mask = np.array([True, True, True, False, False])
    V = adversarial_input(p, X, AdversaryConfig(epsilon=0.1, seed=0), mask=mask)
    np.testing.assert_allclose(np.linalg.norm((V - X)[:, mask], axis=1), 0.1, atol=1e-12)
    assert np.array_equal(V[:, ~mask], X[:, ~mask])


def test_all_frozen_raises():
    p = init_params("linear", 2, seed=0)
    with pytest.raises(NoPerturbableFeaturesError):
        adversarial_input(p, np.zeros((3, 2)), mask=np.zeros(2, bool))


def test_deterministic_given_seed():
    p = init_params("mlp", 3, 4, seed=0)
    X = np.random.default_rng(0).normal(size=(6, 3))
    cfg = AdversaryConfig(seed=11)
    assert np.array_equal(adversarial_input(p, X, cfg), adversarial_input(p, X, cfg))


def test_ascent_over_random_start():
    wins, trials = 0, 0
    for seed in range(50):
        p = init_params("linear", 4, seed=seed)
        X = np.random.default_rng(seed).normal(size=(10, 4))
        V, u0 = adversarial_input(p, X, AdversaryConfig(epsilon=0.1, seed=seed), return_initial=True)
        d_adv = np.abs(p.forward(V) - p.forward(X))
        d_rand = np.abs(p.forward(X + 0.1 * u0) - p.forward(X))
        wins += int(np.sum(d_adv >= d_rand - 1e-15))
        trials += X.shape[0]
    assert wins / trials >= 0.9


def test_random_neighbor_on_sphere():
    X = np.ones((4, 3))
    V = random_neighbor(X, AdversaryConfig(epsilon=0.5, seed=1))
    np.testing.assert_allclose(np.linalg.norm(V - X, axis=1), 0.5, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        AdversaryConfig(epsilon=0)
    with pytest.raises(ValueError):
        AdversaryConfig(power_iters=0)
    assert AdversaryConfig().probe_scale(4) == pytest.approx(2e-6)
