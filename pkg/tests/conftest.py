import numpy as np
import pytest

from mbprox import problems, prox
from mbprox.problems import LossFamily, ProblemSpec


class LinearLoss(LossFamily):
    """``<w, x>``: zero curvature (test only)."""

    name = "linear"
    convex = True

    def values(self, W, X, y):
        W = np.asarray(W, dtype=float)
        return np.einsum("ij,ij->i", X, W) if W.ndim == 2 else X @ W

    def grads(self, W, X, y):
        return X.copy()

    def labels(self, w_true, X, rng, noise_std):
        return np.zeros(len(X))


class ConcaveQuadratic(LossFamily):
    """``-w^2 / 2`` in one dimension: almost-convexity constant exactly 1 (test only)."""

    name = "neg_quad"
    convex = False

    def values(self, W, X, y):
        W = np.asarray(W)
        return -0.5 * np.sum(W * W, axis=-1) * np.ones(len(X))

    def grads(self, W, X, y):
        return -np.broadcast_to(W, X.shape).astype(float).copy()

    def labels(self, w_true, X, rng, noise_std):
        return np.zeros(len(X))


def custom_spec(loss, dim, sigma=0.0, beta=1.0):
    return ProblemSpec(loss, dim, dim, np.zeros(dim), 1.0 / np.sqrt(dim), 0.0,
                       sigma, beta, 1.0)


@pytest.fixture
def squared5():
    return problems.make_problem("squared", 5, seed=3, noise_std=0.2, holdout_size=4000)


def shipped_specs(seed=0):
    """One small instance of every shipped family."""
    return [
        problems.make_problem("logistic", 4, seed=seed),
        problems.make_problem("squared", 4, seed=seed, noise_std=0.3),
        problems.make_problem("sigmoid", 4, seed=seed, noise_std=0.2),
        problems.make_problem("two_layer", 3, seed=seed, hidden=4, estimate_probes=100),
    ]


def ridge_solution(batch, center, gamma):
    """Closed-form minimiser of the squared-loss prox subproblem."""
    X, y = batch.X, batch.y
    n, d = X.shape
    A = X.T @ X / n + gamma * np.eye(d)
    return np.linalg.solve(A, X.T @ y / n + gamma * center)


def ridge_value(batch, center, gamma, w):
    r = batch.X @ w - batch.y
    return 0.5 * np.mean(r * r) + 0.5 * gamma * np.sum((w - center) ** 2)


def random_quadratic(seed, d=None, n=None, gamma=None):
    """A random ridge subproblem together with its exact minimiser and minimum."""
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 21))
    n = n or int(rng.integers(3, 60))
    gamma = gamma if gamma is not None else float(rng.uniform(0.05, 2.0))
    spec = problems.make_problem("squared", d, seed=seed, noise_std=0.3)
    batch = problems.draw_batch(spec, rng, n)
    c = rng.standard_normal(d)
    obj = prox.make_prox_objective(spec, batch, c, gamma)
    w_star = ridge_solution(batch, c, gamma)
    return obj, w_star, ridge_value(batch, c, gamma, w_star), rng
