"""Synthetic stochastic objectives and their regularity constants.

A problem is a distribution over samples ``xi = (x, y)`` together with an
instantaneous loss ``loss(w, xi)``. The population objective is the
expectation of that loss. Four loss families ship with the package:

``logistic``
    ``log(1 + exp(-y <w, x>))`` with labels in {-1, +1}. Convex.
``squared``
    ``0.5 * (<w, x> - y)**2``. Convex.
``sigmoid``
    ``(tanh(<w, x>) - y)**2``. Smooth, nonconvex, with curvature bounded on
    both sides so that the almost-convexity and smoothness constants are
    available in closed form.
``two_layer``
    ``0.5 * (sum_j a_j softplus(<W_j, x>) - y)**2``, a tiny one-hidden-layer
    network (at most 64 parameters) whose constants are estimated from
    finite-difference Hessians.

Features are drawn either uniformly from a sphere of radius
``feature_scale * sqrt(n_features)`` (``design="sphere"``, the default) or
from ``N(0, feature_scale**2 I)`` (``design="gaussian"``). Both designs share
the covariance ``feature_scale**2 I``. The sphere design keeps every
per-sample Hessian bounded, which is what makes the configured constants
honest for each sample; with the gaussian design the constants are
population-level bounds only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Union

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError

PROBE_RADIUS = 3.0
NOISE_CLIP = 4.0
FAMILIES = ("logistic", "squared", "sigmoid", "two_layer")


class Sample(NamedTuple):
    x: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class Batch:
    """A minibatch stored as a feature matrix and a label vector."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Sample(self.X[i], float(self.y[i]))
        return Batch(self.X[i], self.y[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise InvalidInputError("cannot build a batch from no samples")
        return cls(np.stack([s.x for s in samples]),
                   np.array([s.y for s in samples], dtype=float))

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        return cls(np.concatenate([b.X for b in batches]),
                   np.concatenate([b.y for b in batches]))


def _rows(W, n):
    """Inner product helper: ``W`` is one weight vector or one per row."""
    return W if W.ndim == 2 else np.broadcast_to(W, (n, W.shape[0]))


def _linear_scores(W, X):
    if W.ndim == 1:
        return X @ W
    return np.einsum("ij,ij->i", X, W)


class LossFamily:
    """Per-sample loss, gradient and label model of one problem family.

    ``values`` and ``grads`` are vectorised over samples. ``W`` is either a
    single weight vector of shape ``(d,)`` or one weight vector per sample,
    shape ``(n, d)``.
    """

    name = "custom"
    convex = False

    def param_dim(self, n_features):
        return n_features

    def values(self, W, X, y):
        raise NotImplementedError

    def grads(self, W, X, y):
        raise NotImplementedError

    def labels(self, w_true, X, rng, noise_std):
        raise NotImplementedError


class Logistic(LossFamily):
    name = "logistic"
    convex = True

    def values(self, W, X, y):
        return np.logaddexp(0.0, -y * _linear_scores(W, X))

    def grads(self, W, X, y):
        coef = -y * expit(-y * _linear_scores(W, X))
        return coef[:, None] * X

    def labels(self, w_true, X, rng, noise_std):
        p = expit(X @ w_true)
        return np.where(rng.random(X.shape[0]) < p, 1.0, -1.0)


class Squared(LossFamily):
    name = "squared"
    convex = True

    def values(self, W, X, y):
        r = _linear_scores(W, X) - y
        return 0.5 * r * r

    def grads(self, W, X, y):
        return (_linear_scores(W, X) - y)[:, None] * X

    def labels(self, w_true, X, rng, noise_std):
        return X @ w_true + noise_std * rng.standard_normal(X.shape[0])


class SigmoidRegression(LossFamily):
    name = "sigmoid"

    def values(self, W, X, y):
        r = np.tanh(_linear_scores(W, X)) - y
        return r * r

    def grads(self, W, X, y):
        t = np.tanh(_linear_scores(W, X))
        return (2.0 * (t - y) * (1.0 - t * t))[:, None] * X

    def labels(self, w_true, X, rng, noise_std):
        noise = np.clip(rng.standard_normal(X.shape[0]), -NOISE_CLIP, NOISE_CLIP)
        return np.tanh(X @ w_true) + noise_std * noise


class TwoLayerSoftplus(LossFamily):
    """One hidden softplus layer of width ``hidden``, linear readout.

    Parameters are packed as ``[W.ravel(), a]`` with ``W`` of shape
    ``(hidden, n_features)`` and readout weights ``a`` of shape ``(hidden,)``.
    """

    name = "two_layer"

    def __init__(self, hidden, n_features):
        self.hidden = int(hidden)
        self.n_features = int(n_features)

    def param_dim(self, n_features=None):
        return self.hidden * (self.n_features + 1)

    def _forward(self, W, X):
        h, dx = self.hidden, self.n_features
        if W.ndim == 1:
            Wh = W[: h * dx].reshape(h, dx)
            a = W[h * dx:]
            U = X @ Wh.T
        else:
            Wh = W[:, : h * dx].reshape(-1, h, dx)
            a = W[:, h * dx:]
            U = np.einsum("nhd,nd->nh", Wh, X)
        return U, a, np.logaddexp(0.0, U)

    def predict(self, W, X):
        _, a, act = self._forward(W, X)
        return np.sum(a * act, axis=-1)

    def values(self, W, X, y):
        r = self.predict(W, X) - y
        return 0.5 * r * r

    def grads(self, W, X, y):
        U, a, act = self._forward(W, X)
        r = np.sum(a * act, axis=-1) - y
        g_a = r[:, None] * act
        g_W = (r[:, None] * a * expit(U))[:, :, None] * X[:, None, :]
        return np.concatenate([g_W.reshape(X.shape[0], -1), g_a], axis=1)

    def labels(self, w_true, X, rng, noise_std):
        noise = np.clip(rng.standard_normal(X.shape[0]), -NOISE_CLIP, NOISE_CLIP)
        return self.predict(w_true, X) + noise_std * noise


_REGISTRY = {"logistic": Logistic(), "squared": Squared(),
             "sigmoid": SigmoidRegression()}


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A stochastic objective together with its regularity constants.

    ``sigma`` is the almost-convexity constant, ``beta`` the smoothness
    constant and ``variance_bound`` the bound ``V**2`` on the variance of a
    single-sample gradient, all taken over the probe box
    ``[-probe_radius, probe_radius]**dim``. ``phi_star_hint`` is a lower bound
    on the minimum of the population objective (all shipped losses are
    nonnegative, hence the default 0).
    """

    family: Union[str, LossFamily]
    dim: int
    n_features: int
    w_true: np.ndarray
    feature_scale: float
    noise_std: float
    sigma: float
    beta: float
    variance_bound: float
    design: str = "sphere"
    hidden: int = 0
    phi_star_hint: float = 0.0
    holdout_size: int = 100_000
    probe_radius: float = PROBE_RADIUS
    loss: LossFamily = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.family, LossFamily):
            loss = self.family
        elif self.family == "two_layer":
            loss = TwoLayerSoftplus(self.hidden, self.n_features)
        elif self.family in _REGISTRY:
            loss = _REGISTRY[self.family]
        else:
            raise InvalidInputError(f"unknown loss family {self.family!r}")
        object.__setattr__(self, "loss", loss)
        w_true = np.asarray(self.w_true, dtype=float)
        object.__setattr__(self, "w_true", w_true)
        if self.dim < 1 or self.n_features < 1:
            raise InvalidInputError("dimensions must be positive")
        if w_true.shape != (self.dim,) or not np.all(np.isfinite(w_true)):
            raise InvalidInputError(
                f"w_true must be a finite vector of length {self.dim}")
        if loss.param_dim(self.n_features) != self.dim:
            raise InvalidInputError(
                f"family {loss.name} with {self.n_features} features has "
                f"{loss.param_dim(self.n_features)} parameters, not {self.dim}")
        if self.design not in ("sphere", "gaussian"):
            raise InvalidInputError(f"unknown design {self.design!r}")
        if not 0.0 <= self.sigma <= self.beta:
            raise InvalidInputError(
                f"need 0 <= sigma <= beta, got sigma={self.sigma}, beta={self.beta}")
        if self.variance_bound < 0:
            raise InvalidInputError("variance_bound must be nonnegative")
        if loss.convex and self.sigma != 0.0:
            raise InvalidInputError(f"family {loss.name} is convex: sigma must be 0")
        if self.holdout_size < 1:
            raise InvalidInputError("holdout_size must be positive")

    @property
    def name(self):
        return self.loss.name

    @property
    def feature_radius(self):
        """Norm of every feature vector under the sphere design."""
        return self.feature_scale * np.sqrt(self.n_features)

    def replace(self, **changes):
        return replace(self, **changes)


def _as_rng(seed_stream):
    if isinstance(seed_stream, np.random.Generator):
        return seed_stream
    return np.random.default_rng(seed_stream)


def draw_features(spec, rng, n):
    Z = rng.standard_normal((n, spec.n_features))
    if spec.design == "sphere":
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
        return spec.feature_radius * Z
    return spec.feature_scale * Z


def draw_batch(spec, seed_stream, n):
    """Draw ``n`` i.i.d. samples; deterministic given the generator state."""
    if n < 1:
        raise InvalidInputError(f"batch size must be at least 1, got {n}")
    rng = _as_rng(seed_stream)
    X = draw_features(spec, rng, int(n))
    y = spec.loss.labels(spec.w_true, X, rng, spec.noise_std)
    return Batch(X, y)


def _check_w(spec, w):
    w = np.asarray(w, dtype=float)
    if w.shape[-1:] != (spec.dim,):
        raise InvalidInputError(
            f"weights have shape {w.shape}, expected trailing dimension {spec.dim}")
    return w


def _check_batch(spec, batch):
    if batch.X.shape[1] != spec.n_features:
        raise InvalidInputError(
            f"samples have {batch.X.shape[1]} features, expected {spec.n_features}")


def _single(xi):
    return Batch(np.asarray(xi.x, dtype=float)[None, :], np.array([xi.y], dtype=float))


def instantaneous_loss(spec, w, xi):
    batch = _single(xi)
    _check_batch(spec, batch)
    return float(spec.loss.values(_check_w(spec, w), batch.X, batch.y)[0])


def instantaneous_grad(spec, w, xi):
    batch = _single(xi)
    _check_batch(spec, batch)
    return spec.loss.grads(_check_w(spec, w), batch.X, batch.y)[0]


def losses(spec, w, batch):
    """Per-sample losses; ``w`` may hold one weight vector per sample."""
    _check_batch(spec, batch)
    return spec.loss.values(_check_w(spec, w), batch.X, batch.y)


def grads(spec, w, batch):
    """Per-sample gradients, shape ``(len(batch), dim)``."""
    _check_batch(spec, batch)
    return spec.loss.grads(_check_w(spec, w), batch.X, batch.y)


def mean_loss(spec, w, batch):
    return float(np.mean(losses(spec, w, batch)))


def mean_grad(spec, w, batch):
    return np.mean(grads(spec, w, batch), axis=0)


def population_estimates(spec, w, holdout):
    """Holdout estimates of the population objective and ``|grad|**2``.

    Returns the mean loss over ``holdout`` and the squared norm of the mean
    holdout gradient.
    """
    if len(holdout) == 0:
        raise InvalidInputError("holdout is empty")
    g = mean_grad(spec, w, holdout)
    return mean_loss(spec, w, holdout), float(g @ g)


def squared_population(spec, w):
    """Closed-form population objective and gradient of the squared family.

    Both feature designs have covariance ``s**2 I``, so
    ``phi(w) = s**2 |w - w_true|**2 / 2 + noise_std**2 / 2``.
    """
    if spec.name != "squared":
        raise InvalidInputError("closed form is only available for the squared family")
    v = _check_w(spec, w) - spec.w_true
    s2 = spec.feature_scale ** 2
    value = 0.5 * s2 * np.sum(v * v, axis=-1) + 0.5 * spec.noise_std ** 2
    return value, s2 * v


def squared_gradient_variance(spec, w):
    """Closed-form ``E|grad loss(w, xi) - grad phi(w)|**2`` for the squared family."""
    if spec.name != "squared":
        raise InvalidInputError("closed form is only available for the squared family")
    v = _check_w(spec, w) - spec.w_true
    s2, d = spec.feature_scale ** 2, spec.n_features
    excess = (d - 1) if spec.design == "sphere" else (d + 1)
    return s2 * s2 * excess * float(v @ v) + spec.noise_std ** 2 * s2 * d


# --- regularity constants -------------------------------------------------

def _tanh_loss_curvature(label_bound, grid=200_001):
    """Extremes of d^2/dz^2 (tanh z - y)^2 over z and |y| <= label_bound.

    The second derivative is affine in ``y``, so only ``y = +-label_bound``
    need to be scanned. Also returns the largest ``|(t - y)(1 - t^2)|``.
    """
    t = np.linspace(-1.0, 1.0, grid)
    one = 1.0 - t * t
    lo, hi, slope = np.inf, -np.inf, 0.0
    for y in (-label_bound, label_bound):
        c = 2.0 * one * (one - 2.0 * t * (t - y))
        lo, hi = min(lo, c.min()), max(hi, c.max())
        slope = max(slope, np.abs((t - y) * one).max())
    return lo, hi, slope


def analytic_constants(family, n_features, w_true, feature_scale, noise_std,
                       design="sphere", probe_radius=PROBE_RADIUS):
    """``(sigma, beta, V**2)`` for the linear-predictor families.

    Sphere design: per-sample bounds. Gaussian design: population bounds.
    The squared-loss variance grows with ``|w - w_true|``; it is maximised
    over the probe box.
    """
    d = n_features
    s2 = feature_scale ** 2
    r2 = s2 * d if design == "sphere" else s2
    mean_sq_norm = s2 * d
    if family == "logistic":
        return 0.0, r2 / 4.0, mean_sq_norm
    if family == "squared":
        far = np.sum((probe_radius + np.abs(w_true)) ** 2)
        excess = (d - 1) if design == "sphere" else (d + 1)
        return 0.0, r2, s2 * s2 * excess * far + noise_std ** 2 * mean_sq_norm
    if family == "sigmoid":
        lo, hi, slope = _tanh_loss_curvature(1.0 + NOISE_CLIP * noise_std)
        margin = 1.01
        sigma = margin * max(0.0, -lo) * r2
        beta = margin * hi * r2
        return sigma, max(beta, sigma), 4.0 * slope ** 2 * mean_sq_norm
    raise InvalidInputError(f"no closed-form constants for family {family!r}")


def make_problem(family, n_features, *, seed=0, noise_std=0.1, w_true=None,
                 w_true_scale=1.0, feature_scale=None, design="sphere", hidden=8,
                 holdout_size=100_000, phi_star_hint=0.0, sigma=None, beta=None,
                 variance_bound=None, probe_radius=PROBE_RADIUS,
                 estimate_probes=400, safety=2.0):
    """Build a :class:`ProblemSpec` with its regularity constants filled in.

    ``feature_scale`` defaults to ``1/sqrt(n_features)`` (unit-norm features on
    the sphere). ``w_true`` defaults to i.i.d. ``N(0, w_true_scale**2)``
    entries drawn from ``seed``, which makes the noiseless score ``<w_true, x>``
    have standard deviation ``w_true_scale``. Constants passed explicitly are
    kept as given. Otherwise linear families get closed-form values and the
    two-layer family gets probe estimates inflated by ``safety``.
    """
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown loss family {family!r}")
    if feature_scale is None:
        feature_scale = 1.0 / np.sqrt(n_features)
    hidden = hidden if family == "two_layer" else 0
    dim = hidden * (n_features + 1) if family == "two_layer" else n_features
    rng = np.random.default_rng(seed)
    if w_true is None:
        w_true = w_true_scale * rng.standard_normal(dim)
    w_true = np.asarray(w_true, dtype=float)

    if family == "two_layer":
        if None in (sigma, beta, variance_bound):
            from .diagnostics import estimate_hessian_extremes, estimate_variance
            draft = ProblemSpec(family, dim, n_features, w_true, feature_scale,
                                noise_std, 0.0, 0.0, 0.0, design=design,
                                hidden=hidden, probe_radius=probe_radius)
            lo, hi = estimate_hessian_extremes(draft, estimate_probes, seed=seed)
            v2 = estimate_variance(draft, 10, 2000, seed=seed)
            est = (safety * max(0.0, -lo), safety * max(hi, 0.0), safety * v2)
            sigma = est[0] if sigma is None else sigma
            beta = max(est[1], sigma) if beta is None else beta
            variance_bound = est[2] if variance_bound is None else variance_bound
    else:
        s_a, b_a, v_a = analytic_constants(family, n_features, w_true,
                                           feature_scale, noise_std, design,
                                           probe_radius)
        sigma = s_a if sigma is None else sigma
        beta = b_a if beta is None else beta
        variance_bound = v_a if variance_bound is None else variance_bound

    return ProblemSpec(family, dim, n_features, w_true, float(feature_scale),
                       float(noise_std), float(sigma), float(beta),
                       float(variance_bound), design=design, hidden=hidden,
                       phi_star_hint=float(phi_star_hint),
                       holdout_size=int(holdout_size), probe_radius=probe_radius)
