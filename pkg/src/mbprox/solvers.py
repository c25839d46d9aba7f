"""Solvers for the strongly convex minibatch subproblems.

Every solver returns a :class:`SolverReport`. In tolerance mode a solver
stops as soon as the gradient at its current point satisfies
``|grad F|**2 <= 2 lam delta``, where ``lam`` is the strong-convexity
constant; by strong convexity that point is then ``delta``-suboptimal. In
fixed-steps mode it performs exactly ``g`` updates and certifies nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost_model import WorkCounts
from .errors import DivergenceError, InvalidInputError

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class SolverBudget:
    mode: str = "tolerance"
    target_subopt: Optional[float] = None
    fixed_steps: Optional[int] = None
    max_steps: int = 10_000

    def __post_init__(self):
        if self.mode == "tolerance":
            if self.target_subopt is None or not self.target_subopt > 0:
                raise InvalidInputError("tolerance mode needs target_subopt > 0")
        elif self.mode == "fixed_steps":
            if self.fixed_steps is None or self.fixed_steps < 1:
                raise InvalidInputError("fixed_steps mode needs fixed_steps >= 1")
        else:
            raise InvalidInputError(f"unknown budget mode {self.mode!r}")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be at least 1")

    @classmethod
    def tolerance(cls, target, max_steps=10_000):
        return cls("tolerance", target_subopt=target, max_steps=max_steps)

    @classmethod
    def fixed(cls, steps):
        return cls("fixed_steps", fixed_steps=steps, max_steps=max(steps, 1))


@dataclass(frozen=True, eq=False)
class SolverReport:
    solution: np.ndarray
    steps_taken: int
    batch_grad_evals: int
    single_grad_evals: int
    final_grad_norm_sq: float
    certified_subopt_bound: float
    certified: bool
    budget_exhausted: bool
    batch_size: int
    history: tuple = field(default=(), repr=False)

    @property
    def work(self):
        return WorkCounts(self.batch_grad_evals, self.single_grad_evals, self.batch_size)


def condition_number(gamma, rho, sigma, beta):
    """``(beta + gamma + rho) / (gamma + rho - sigma)``."""
    margin = gamma + rho - sigma
    if margin <= 0:
        raise InvalidInputError(
            f"gamma + rho - sigma = {margin:.4g} is not positive; no strong convexity")
    return (beta + gamma + rho) / margin


class _Guard:
    """Raises :class:`DivergenceError` once the objective leaves ``1e6 * |F(w0)|``."""

    def __init__(self, f0):
        if not math.isfinite(f0):
            raise DivergenceError("objective is not finite at the starting point", step=0)
        self.limit = DIVERGENCE_FACTOR * max(abs(f0), 1.0)

    def __call__(self, f, step):
        if not math.isfinite(f) or f > self.limit:
            raise DivergenceError(f"objective {f:.4g} exceeded {self.limit:.4g}", step=step)


def _report(obj, w, steps, batch_evals, single_evals, gn2, certified, exhausted, history=()):
    lam = obj.strong_convexity
    if math.isnan(gn2):
        bound = math.inf
    else:
        bound = gn2 / (2.0 * lam) if lam > 0 else math.inf
    return SolverReport(w, steps, batch_evals, single_evals, gn2, bound, certified,
                        exhausted, obj.n, tuple(history))


def _target(obj, budget):
    lam = obj.strong_convexity
    if lam <= 0:
        raise InvalidInputError(
            "tolerance mode needs gamma + rho > sigma to certify suboptimality")
    return 2.0 * lam * budget.target_subopt


def heavy_ball_step(w, v, g, lr, momentum):
    """``v <- momentum v + g``; ``w <- w - lr v``. Shared with minibatch SGD."""
    v = momentum * v + g
    return w - lr * v, v


def gd_momentum(obj, w0, step_size=None, momentum=0.0, budget=None):
    """Gradient descent with heavy-ball momentum; default step ``1/L``."""
    lr = 1.0 / obj.smoothness if step_size is None else step_size
    if not lr > 0 or not 0.0 <= momentum < 1.0:
        raise InvalidInputError("need step_size > 0 and 0 <= momentum < 1")
    budget = budget or SolverBudget.fixed(1)
    w = np.array(w0, dtype=float)
    v = np.zeros_like(w)
    f, g = obj.value_grad(w)
    guard = _Guard(f)
    evals = 1

    if budget.mode == "fixed_steps":
        for k in range(budget.fixed_steps):
            if k:
                f, g = obj.value_grad(w)
                evals += 1
                guard(f, k)
            w, v = heavy_ball_step(w, v, g, lr, momentum)
        return _report(obj, w, budget.fixed_steps, evals, 0, math.nan, False, False)

    threshold = _target(obj, budget)
    steps = 0
    while True:
        gn2 = float(g @ g)
        if gn2 <= threshold:
            return _report(obj, w, steps, evals, 0, gn2, True, False)
        if steps >= budget.max_steps:
            return _report(obj, w, steps, evals, 0, gn2, False, True)
        w, v = heavy_ball_step(w, v, g, lr, momentum)
        steps += 1
        f, g = obj.value_grad(w)
        evals += 1
        guard(f, steps)


def agd_strongly_convex(obj, w0, budget=None):
    """Nesterov's constant-momentum method for strongly convex objectives.

    Step ``1/L`` from the extrapolated point ``y = x + mu (x - x_prev)`` with
    ``mu = (sqrt(kappa) - 1) / (sqrt(kappa) + 1)``. The certificate is tested
    at ``y``, where the gradient is evaluated anyway, and ``y`` is returned.
    """
    lam, L = obj.strong_convexity, obj.smoothness
    if lam <= 0:
        raise InvalidInputError("accelerated descent needs gamma + rho > sigma")
    q = math.sqrt(L / lam)
    mu = (q - 1.0) / (q + 1.0)
    budget = budget or SolverBudget.tolerance(1e-8)
    fixed = budget.mode == "fixed_steps"
    limit = budget.fixed_steps if fixed else budget.max_steps
    threshold = None if fixed else _target(obj, budget)

    x = np.array(w0, dtype=float)
    x_prev = x
    guard = None
    steps = evals = 0
    while True:
        y = x + mu * (x - x_prev) if steps else x
        f, g = obj.value_grad(y)
        evals += 1
        if guard is None:
            guard = _Guard(f)
        guard(f, steps)
        gn2 = float(g @ g)
        if not fixed and gn2 <= threshold:
            return _report(obj, y, steps, evals, 0, gn2, True, False)
        if steps >= limit:
            return _report(obj, y, steps, evals, 0, gn2, False, not fixed)
        x_prev, x = x, y - g / L
        steps += 1


def svrg(obj, w0, budget=None, seed_stream=None, step_size=None, epoch_length=None):
    """SVRG on the finite sum defined by the subproblem's batch.

    Each epoch takes one batch gradient at the anchor, then
    ``epoch_length`` single-sample steps with the corrected direction
    ``grad_i(w) - grad_i(anchor) + mean_grad(anchor) + grad_quad(w)``.
    Defaults: step ``1/(10 L)`` and ``max(2 ceil(kappa), n)`` inner steps.
    The last inner iterate becomes the next anchor, and the certificate is
    checked at anchors. ``history`` holds the objective at each anchor.
    """
    lam, L = obj.strong_convexity, obj.smoothness
    if lam <= 0:
        raise InvalidInputError("SVRG needs gamma + rho > sigma")
    rng = seed_stream if isinstance(seed_stream, np.random.Generator) \
        else np.random.default_rng(seed_stream)
    eta = 1.0 / (10.0 * L) if step_size is None else step_size
    n = obj.n
    if epoch_length is None:
        epoch_length = max(2 * math.ceil(L / lam), n)
    budget = budget or SolverBudget.tolerance(1e-8)
    fixed = budget.mode == "fixed_steps"
    limit = budget.fixed_steps if fixed else budget.max_steps
    threshold = None if fixed else _target(obj, budget)

    loss = obj.spec.loss
    X, Y = obj.batch.X, obj.batch.y
    anchor = np.array(w0, dtype=float)
    guard = None
    steps = batch_evals = single_evals = 0
    history = []
    while True:
        G = loss.grads(anchor, X, Y)
        mu = np.mean(G, axis=0)
        f = float(np.mean(loss.values(anchor, X, Y))) + obj.quad_value(anchor)
        full = obj.quad_grad(mu, anchor)
        batch_evals += 1
        if guard is None:
            guard = _Guard(f)
        guard(f, steps)
        history.append(f)
        gn2 = float(full @ full)
        if not fixed and gn2 <= threshold:
            return _report(obj, anchor, steps, batch_evals, single_evals, gn2, True, False, history)
        if steps >= limit:
            return _report(obj, anchor, steps, batch_evals, single_evals, gn2,
                           False, not fixed, history)
        w = anchor.copy()
        for i in rng.integers(0, n, min(epoch_length, limit - steps)):
            gi = loss.grads(w, X[i:i + 1], Y[i:i + 1])[0] - G[i] + mu
            w = w - eta * obj.quad_grad(gi, w)
        done = min(epoch_length, limit - steps)
        steps += done
        single_evals += done
        anchor = w


SOLVERS = {"gd_momentum": gd_momentum, "agd": agd_strongly_convex, "svrg": svrg}


def run_solver(name, obj, w0, budget, seed_stream=None, step_size=None, momentum=0.0):
    """Dispatch by solver name with the options each solver understands."""
    if name == "gd_momentum":
        return gd_momentum(obj, w0, step_size=step_size, momentum=momentum, budget=budget)
    if name == "agd":
        return agd_strongly_convex(obj, w0, budget=budget)
    if name == "svrg":
        return svrg(obj, w0, budget=budget, seed_stream=seed_stream)
    raise InvalidInputError(f"unknown solver {name!r}")
