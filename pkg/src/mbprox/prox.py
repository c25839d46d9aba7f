"""Regularised minibatch subproblems and the step-size schedules around them.

Each outer step of minibatch-prox minimises

    F(w) = mean_i loss(w, xi_i) + gamma/2 |w - c|**2 + rho/2 |w - c'|**2

over a fresh batch. The ``rho`` term is only used by the memory-efficient
variant, where ``c'`` is the previous inner iterate. With ``gamma + rho >
sigma`` the objective is ``(gamma + rho - sigma)``-strongly convex and
``(gamma + rho + beta)``-smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import problems
from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class ProxObjective:
    spec: problems.ProblemSpec
    batch: problems.Batch
    center_gamma: np.ndarray
    gamma: float
    center_rho: Optional[np.ndarray] = None
    rho: float = 0.0

    @property
    def n(self):
        return len(self.batch)

    @property
    def dim(self):
        return self.spec.dim

    @property
    def strong_convexity(self):
        return self.gamma + self.rho - self.spec.sigma

    @property
    def smoothness(self):
        return self.gamma + self.rho + self.spec.beta

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise InvalidInputError(f"weights have shape {w.shape}, expected ({self.dim},)")
        return w

    def quad_value(self, w):
        v = 0.0
        if self.gamma:
            r = w - self.center_gamma
            v += 0.5 * self.gamma * float(r @ r)
        if self.rho:
            r = w - self.center_rho
            v += 0.5 * self.rho * float(r @ r)
        return v

    def quad_grad(self, g, w):
        """Add the gradient of the quadratic terms to ``g``.

        Terms with zero weight are skipped, so an unregularised objective
        returns the loss gradient bit for bit.
        """
        if self.gamma:
            g = g + self.gamma * (w - self.center_gamma)
        if self.rho:
            g = g + self.rho * (w - self.center_rho)
        return g

    def value_grad(self, w):
        w = self._check(w)
        G = problems.grads(self.spec, w, self.batch)
        value = float(np.mean(problems.losses(self.spec, w, self.batch)))
        return value + self.quad_value(w), self.quad_grad(np.mean(G, axis=0), w)

    def value(self, w):
        w = self._check(w)
        return problems.mean_loss(self.spec, w, self.batch) + self.quad_value(w)

    def grad(self, w):
        return self.value_grad(w)[1]

    def component_grads(self, w, idx):
        """Loss gradients of the samples ``idx`` (no quadratic terms)."""
        return problems.grads(self.spec, self._check(w), self.batch[np.atleast_1d(idx)])


def make_prox_objective(spec, batch, center_gamma, gamma, center_rho=None, rho=0.0):
    if len(batch) == 0:
        raise InvalidInputError("batch is empty")
    if gamma < 0 or rho < 0:
        raise InvalidInputError("gamma and rho must be nonnegative")
    center_gamma = np.array(center_gamma, dtype=float)
    if center_gamma.shape != (spec.dim,):
        raise InvalidInputError("center has the wrong dimension")
    if rho:
        if center_rho is None:
            raise InvalidInputError("rho > 0 needs center_rho")
        center_rho = np.array(center_rho, dtype=float)
    return ProxObjective(spec, batch, center_gamma, float(gamma), center_rho, float(rho))


def prox_value_grad(obj, w):
    return obj.value_grad(w)


@dataclass(frozen=True)
class MPSchedule:
    """Proximal weight and inner tolerance for ``T`` outer steps of size ``b``.

    ``Delta`` is an upper bound on ``phi(w0) - phi*``. ``valid`` records
    whether ``b >= 2 (sigma + beta) / (gamma - sigma)``, the batch size needed
    for the stability argument; an invalid schedule is returned, not raised,
    so that callers can decide.
    """

    gamma: float
    T: int
    b: int
    delta: float
    Delta: float
    sigma: float
    beta: float
    valid: bool

    @property
    def min_batch(self):
        margin = self.gamma - self.sigma
        return np.inf if margin <= 0 else 2.0 * (self.sigma + self.beta) / margin


def theorem1_schedule(sigma, beta, V, T, b, Delta):
    """``gamma = sigma + sqrt(32 (beta + 2 sigma) V^2 T / (Delta b))`` and
    ``delta = 8 V^2 / ((beta + gamma) b)``.

    With ``V = 0`` the formula collapses to ``gamma = sigma``; the schedule is
    then flagged invalid and the caller must pick ``gamma`` itself.
    """
    if Delta <= 0:
        raise InvalidInputError(f"Delta must be positive, got {Delta}")
    if sigma < 0 or beta <= 0 or V < 0 or T < 1 or b < 1:
        raise InvalidInputError("need sigma >= 0, beta > 0, V >= 0, T >= 1, b >= 1")
    gamma = sigma + np.sqrt(32.0 * (beta + 2.0 * sigma) * V * V * T / (Delta * b))
    delta = 8.0 * V * V / ((beta + gamma) * b)
    margin = gamma - sigma
    valid = bool(margin > 0 and b >= 2.0 * (sigma + beta) / margin)
    return MPSchedule(float(gamma), int(T), int(b), float(delta), float(Delta),
                      float(sigma), float(beta), valid)


def select_random_iterate(iterates, seed_stream):
    """Uniform ``R`` in ``{1, ..., T}``; returns ``(R, iterates[R - 1])``."""
    if len(iterates) == 0:
        raise InvalidInputError("no iterates to choose from")
    rng = problems._as_rng(seed_stream)
    R = int(rng.integers(1, len(iterates) + 1))
    return R, iterates[R - 1]


@dataclass(frozen=True)
class InnerSchedule:
    """Per-step proximal weights, tolerances and averaging weights (s = 1..S)."""

    rho: np.ndarray
    eta: np.ndarray
    weights: np.ndarray


def inner_schedules(gamma, sigma, beta, V, m, S):
    """Schedules of the memory-efficient inner loop.

    ``rho_s = (gamma - sigma)(s - 1)/2``, ``eta_s = V^2 S / ((beta + gamma) m s^5)``
    and averaging weights ``q_s = 2 s / (S (S + 1))``.
    """
    margin = gamma - sigma
    if S < 1:
        raise InvalidInputError("S must be at least 1")
    if margin <= 0 or m < 2.0 * (sigma + beta) / margin:
        raise InvalidInputError(
            f"inner batch m={m} is below 2(sigma+beta)/(gamma-sigma)"
            f"={2.0 * (sigma + beta) / margin if margin > 0 else np.inf:.4g}")
    s = np.arange(1, S + 1, dtype=float)
    rho = margin * (s - 1.0) / 2.0
    eta = V * V * S / ((beta + gamma) * m * s ** 5)
    weights = 2.0 * s / (S * (S + 1.0))
    return InnerSchedule(rho, eta, weights)
