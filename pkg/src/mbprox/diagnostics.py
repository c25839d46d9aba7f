"""Empirical checks of the regularity constants and of analytic gradients.

Every estimator here is a maximum over random probes, so it is a lower bound
on the corresponding global constant. Probes are generated in fixed-size
blocks, each seeded from ``(seed, block_index)``; asking for more probes only
appends to the probe set, so the estimates are nondecreasing in the probe
count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .problems import Batch, draw_batch, grads, losses

_BLOCK = 128


@dataclass(frozen=True)
class ConstantEstimates:
    beta_hat: float
    sigma_hat: float
    V_sq_hat: float
    probe_count: int
    probe_box: tuple

    def as_dict(self):
        return {"beta_hat": self.beta_hat, "sigma_hat": self.sigma_hat,
                "V_sq_hat": self.V_sq_hat, "probe_count": self.probe_count,
                "probe_box": list(self.probe_box)}


def _probe_pairs(spec, probes, seed):
    """Pairs ``(w, w')`` in the probe box with one sample per pair.

    Half of the pairs are independent uniform points; the other half are
    local perturbations at log-uniform distances, which is what drives the
    estimates towards the extreme curvature rather than an average secant.
    """
    R, d = spec.probe_radius, spec.dim
    Ws, Wps, batches = [], [], []
    for k in range(-(-probes // _BLOCK)):
        rng = np.random.default_rng([seed, k])
        W = rng.uniform(-R, R, (_BLOCK, d))
        far = rng.uniform(-R, R, (_BLOCK, d))
        step = rng.standard_normal((_BLOCK, d))
        step /= np.linalg.norm(step, axis=1, keepdims=True)
        step *= R * 10.0 ** rng.uniform(-3.0, 0.0, (_BLOCK, 1))
        near = np.clip(W + step, -R, R)
        local = (np.arange(_BLOCK) % 2 == 1)[:, None]
        Ws.append(W)
        Wps.append(np.where(local, near, far))
        batches.append(draw_batch(spec, rng, _BLOCK))
    W = np.concatenate(Ws)[:probes]
    Wp = np.concatenate(Wps)[:probes]
    batch = Batch.concat(batches)[:probes]
    return W, Wp, batch


def estimate_smoothness(spec, probes, seed=0):
    """Largest observed ``|grad(w) - grad(w')| / |w - w'|`` on shared samples."""
    if probes < 2:
        raise InvalidInputError("need at least 2 probes")
    W, Wp, batch = _probe_pairs(spec, probes, seed)
    dist = np.linalg.norm(W - Wp, axis=1)
    ok = dist > 0
    diff = np.linalg.norm(grads(spec, W, batch) - grads(spec, Wp, batch), axis=1)
    return float(np.max(diff[ok] / dist[ok], initial=0.0))


def _bregman_gaps(spec, probes, seed):
    W, Wp, batch = _probe_pairs(spec, probes, seed)
    delta = W - Wp
    dist2 = np.sum(delta * delta, axis=1)
    gap = (losses(spec, W, batch) - losses(spec, Wp, batch)
           - np.sum(grads(spec, Wp, batch) * delta, axis=1))
    ok = dist2 > 0
    return gap[ok], dist2[ok]


def estimate_almost_convexity(spec, probes, seed=0):
    """Largest observed ``2 max(0, -gap) / |w - w'|**2`` (Bregman gap)."""
    if probes < 2:
        raise InvalidInputError("need at least 2 probes")
    gap, dist2 = _bregman_gaps(spec, probes, seed)
    return float(np.max(2.0 * np.maximum(0.0, -gap) / dist2, initial=0.0))


def estimate_variance(spec, probe_points, n_samples, seed=0):
    """Largest single-sample gradient variance over the probe points.

    ``probe_points`` is either an array of weight vectors or a count of
    points to draw uniformly from the probe box.
    """
    if n_samples < 2:
        raise InvalidInputError("need at least 2 samples per probe point")
    rng = np.random.default_rng([seed, 1 << 20])
    if np.ndim(probe_points) == 0:
        R = spec.probe_radius
        points = rng.uniform(-R, R, (int(probe_points), spec.dim))
    else:
        points = np.atleast_2d(np.asarray(probe_points, dtype=float))
    worst = 0.0
    for w in points:
        G = grads(spec, w, draw_batch(spec, rng, n_samples))
        worst = max(worst, float(np.sum(np.var(G, axis=0, ddof=1))))
    return worst


def finite_difference_hessian(spec, w, xi, h=1e-5):
    """Central-difference Hessian of one sample's loss, symmetrised."""
    d = spec.dim
    E = h * np.eye(d)
    W = np.concatenate([w + E, w - E])
    batch = Batch(np.repeat(np.asarray(xi.x, dtype=float)[None, :], 2 * d, axis=0),
                  np.full(2 * d, xi.y))
    G = grads(spec, W, batch)
    H = (G[:d] - G[d:]).T / (2.0 * h)
    return 0.5 * (H + H.T)


def estimate_hessian_extremes(spec, probes, seed=0, h=1e-5):
    """Smallest and largest per-sample Hessian eigenvalue seen in the box."""
    rng = np.random.default_rng([seed, 1 << 21])
    R = spec.probe_radius
    lo, hi = np.inf, -np.inf
    for _ in range(probes):
        w = rng.uniform(-R, R, spec.dim)
        xi = draw_batch(spec, rng, 1)[0]
        ev = np.linalg.eigvalsh(finite_difference_hessian(spec, w, xi, h))
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    return float(lo), float(hi)


def gradient_check(spec, w, xi, h=1e-5, grad_fn=None):
    """Max over coordinates of ``|analytic - central difference| / (|analytic| + h)``.

    ``grad_fn(w, xi)`` overrides the family gradient, which is how a broken
    gradient can be checked against its own loss.
    """
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    w = np.asarray(w, dtype=float)
    d = w.shape[0]
    E = h * np.eye(d)
    x = np.asarray(xi.x, dtype=float)
    batch = Batch(np.repeat(x[None, :], 2 * d, axis=0), np.full(2 * d, xi.y))
    vals = losses(spec, np.concatenate([w + E, w - E]), batch)
    fd = (vals[:d] - vals[d:]) / (2.0 * h)
    if grad_fn is None:
        analytic = grads(spec, w, Batch(x[None, :], [xi.y]))[0]
    else:
        analytic = np.asarray(grad_fn(w, xi), dtype=float)
    return float(np.max(np.abs(analytic - fd) / (np.abs(analytic) + h)))


def estimate_constants(spec, probes=2000, seed=0, trajectory=None,
                       variance_points=10, variance_samples=2000):
    """Probe estimates of ``beta``, ``sigma`` and ``V**2``.

    ``beta_hat`` also takes ``sigma_hat`` into account: a negative Bregman
    gap of size ``sigma |w - w'|**2 / 2`` is itself a witness of curvature
    ``sigma``, so ``sigma_hat <= beta_hat`` always holds. Points from
    ``trajectory`` (e.g. driver iterates) are added to the variance probes.
    """
    beta_sec = estimate_smoothness(spec, probes, seed)
    sigma_hat = estimate_almost_convexity(spec, probes, seed)
    R = spec.probe_radius
    rng = np.random.default_rng([seed, 1 << 22])
    points = rng.uniform(-R, R, (variance_points, spec.dim))
    if trajectory is not None and len(trajectory):
        traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
        pick = np.linspace(0, len(traj) - 1, min(len(traj), variance_points)).astype(int)
        points = np.concatenate([points, traj[pick]])
    v2 = estimate_variance(spec, points, variance_samples, seed)
    return ConstantEstimates(beta_hat=max(beta_sec, sigma_hat), sigma_hat=sigma_hat,
                             V_sq_hat=v2, probe_count=probes, probe_box=(-R, R))
