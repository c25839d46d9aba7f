"""Outer algorithms: minibatch-prox, its memory-efficient variant, and minibatch SGD.

Every driver consumes fresh samples only, records one :class:`TraceRecord`
per outer step (every ``ceil(T/500)`` steps for SGD) and returns an iterate
chosen uniformly at random from ``w_1 .. w_T``.

Randomness comes from one ``SeedSequence(seed)`` spawned into the same five
streams, in the same order, for every driver: sampling, holdout, solver,
selection and initialisation. Two drivers that consume the same streams in
the same way therefore see the same samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import problems
from .cost_model import CostConstants, CostSummary, WorkCounts, account
from .errors import ConfigError, DivergenceError, InvalidInputError
from .prox import inner_schedules, make_prox_objective, select_random_iterate, theorem1_schedule
from .solvers import SolverBudget, heavy_ball_step, run_solver, _Guard

METHODS = ("mp", "mp_mem", "sgd")
SGD_TRACE_POINTS = 500


@dataclass(frozen=True)
class MethodConfig:
    """Tunables of one driver run.

    ``gamma_mode="theorem1"`` derives ``gamma`` and the inner tolerance from
    the problem constants; ``"fixed"`` uses ``gamma`` as given, with the
    tolerance ``delta`` defaulting to ``8 V^2 / ((beta + gamma) b)``.
    ``budget_mode="fixed_steps"`` runs exactly ``g`` solver steps per
    subproblem. ``lr`` and ``momentum`` drive SGD and, when set, the
    ``gd_momentum`` inner solver.
    """

    method: str
    T: int
    b: int = 0
    m: int = 0
    S: int = 0
    gamma_mode: str = "theorem1"
    gamma: Optional[float] = None
    inner_solver: str = "agd"
    budget_mode: str = "tolerance"
    delta: Optional[float] = None
    g: int = 1
    lr: Optional[float] = None
    momentum: float = 0.0
    max_steps: int = 10_000
    w0_scale: float = 0.0
    Delta: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.method == "mp_mem":
            if self.m < 1 or self.S < 1:
                raise ConfigError("mp_mem needs m >= 1 and S >= 1")
        elif self.b < 1:
            raise ConfigError(f"{self.method} needs b >= 1")
        if self.method == "sgd":
            if self.lr is None or not self.lr > 0:
                raise ConfigError("sgd needs lr > 0")
        else:
            if self.gamma_mode not in ("theorem1", "fixed"):
                raise ConfigError(f"unknown gamma_mode {self.gamma_mode!r}")
            if self.gamma_mode == "fixed" and (self.gamma is None or self.gamma < 0):
                raise ConfigError("gamma_mode 'fixed' needs gamma >= 0")
            if self.inner_solver not in ("gd_momentum", "agd", "svrg"):
                raise ConfigError(f"unknown inner_solver {self.inner_solver!r}")
            if self.budget_mode not in ("tolerance", "fixed_steps"):
                raise ConfigError(f"unknown budget_mode {self.budget_mode!r}")
            if self.budget_mode == "fixed_steps" and self.g < 1:
                raise ConfigError("fixed_steps needs g >= 1")
            if self.delta is not None and not self.delta > 0:
                raise ConfigError("delta must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.max_steps < 1 or self.w0_scale < 0:
            raise ConfigError("need max_steps >= 1 and w0_scale >= 0")

    @property
    def sample_budget(self):
        return self.m * self.S * self.T if self.method == "mp_mem" else self.b * self.T


TRACE_COLUMNS = ("run_id", "seed", "method", "t", "s", "samples_used", "batch_grad_evals",
                 "single_grad_evals", "sim_runtime", "energy", "pop_obj_est",
                 "grad_norm_sq_est", "quality_flag")


@dataclass(frozen=True)
class TraceRecord:
    run_id: str
    seed: int
    method: str
    t: int
    s: int
    samples_used: int
    batch_grad_evals: int
    single_grad_evals: int
    sim_runtime: float
    energy: float
    pop_obj_est: float
    grad_norm_sq_est: float
    quality_flag: str = "ok"

    def as_row(self):
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass
class MPState:
    t: int = 0
    w_prev: Optional[np.ndarray] = None
    samples_consumed: int = 0
    trace: list = field(default_factory=list)


_COUNTERS = ("samples_used", "batch_grad_evals", "single_grad_evals", "sim_runtime", "energy")


def trace_append(state, record):
    """Append ``record`` to ``state.trace``.

    Non-finite estimates are kept and flagged ``nan``. Counters must not
    decrease; a decrease is a bookkeeping bug and raises.
    """
    if state.trace:
        last = state.trace[-1]
        for name in _COUNTERS:
            if getattr(record, name) < getattr(last, name):
                raise InvalidInputError(f"counter {name} decreased")
    if not (math.isfinite(record.pop_obj_est) and math.isfinite(record.grad_norm_sq_est)):
        flag = "nan" if record.quality_flag == "ok" else record.quality_flag + "|nan"
        record = _with_flag(record, flag)
    state.trace.append(record)
    return state


def _with_flag(record, flag):
    values = record.as_row()[:-1]
    return TraceRecord(*values, flag)


@dataclass(eq=False)
class RunResult:
    """Output of a driver run.

    ``selected`` is ``w_R``; ``iterates`` holds ``w_1 .. w_T``. The population
    estimates are holdout values at ``w_R`` and at ``w_T``.
    """

    selected: np.ndarray
    R: int
    trace: list
    iterates: np.ndarray
    samples_used: int
    Delta: float
    gamma: float
    delta: float
    pop_obj_selected: float
    grad_norm_sq_selected: float
    pop_obj_last: float
    grad_norm_sq_last: float
    totals: CostSummary


@dataclass
class _Streams:
    sampling: np.random.Generator
    holdout: np.random.Generator
    solver: np.random.Generator
    selection: np.random.Generator
    init: np.random.Generator


def _streams(seed):
    kids = np.random.SeedSequence(seed).spawn(5)
    return _Streams(*(np.random.default_rng(k) for k in kids))


class _Run:
    """Bookkeeping shared by all drivers: counters, costs, holdout and trace."""

    def __init__(self, spec, config, seed, run_id, constants, holdout):
        self.spec, self.config, self.seed = spec, config, seed
        self.run_id = run_id
        self.constants = constants or CostConstants()
        self.streams = _streams(seed)
        if holdout is None:
            holdout = problems.draw_batch(spec, self.streams.holdout, spec.holdout_size)
        self.holdout = holdout
        self.state = MPState()
        self.batch_evals = self.single_evals = 0
        self.cost = CostSummary()
        dim = spec.dim
        w0 = np.zeros(dim)
        if config.w0_scale > 0:
            w0 = config.w0_scale * self.streams.init.standard_normal(dim)
        self.state.w_prev = w0

    def draw(self, n):
        batch = problems.draw_batch(self.spec, self.streams.sampling, n)
        self.state.samples_consumed += n
        return batch

    def charge(self, work):
        self.batch_evals += work.batch_grad_evals
        self.single_evals += work.single_grad_evals
        self.cost = self.cost + account([work], self.constants)

    def estimates(self, w):
        return problems.population_estimates(self.spec, w, self.holdout)

    def record(self, t, s, w, flag="ok"):
        f, g2 = self.estimates(w)
        rec = TraceRecord(self.run_id, self.seed, self.config.method, t, s,
                          self.state.samples_consumed, self.batch_evals, self.single_evals,
                          self.cost.runtime, self.cost.energy, float(f), float(g2), flag)
        trace_append(self.state, rec)

    def finish(self, iterates, gamma, delta, Delta):
        iterates = np.asarray(iterates)
        R, w = select_random_iterate(iterates, self.streams.selection)
        f_sel, g_sel = self.estimates(w)
        f_last, g_last = self.estimates(iterates[-1])
        return RunResult(np.array(w), R, self.state.trace, iterates,
                         self.state.samples_consumed, Delta, gamma, delta,
                         float(f_sel), float(g_sel), float(f_last), float(g_last), self.cost)


def _initial_gap(run):
    """``Delta``: holdout objective at ``w0`` minus the problem's lower bound on ``phi*``."""
    if run.config.Delta is not None:
        Delta = run.config.Delta
    else:
        Delta = run.estimates(run.state.w_prev)[0] - run.spec.phi_star_hint
    if not Delta > 0:
        raise ConfigError(f"initial gap Delta = {Delta:.4g} is not positive; set Delta explicitly")
    return float(Delta)


def _prox_parameters(run, b):
    """Resolve ``(gamma, delta, Delta)`` for a prox driver whose subproblems use ``b`` samples."""
    spec, cfg = run.spec, run.config
    V = math.sqrt(spec.variance_bound)
    Delta = _initial_gap(run)
    if cfg.gamma_mode == "theorem1":
        sched = theorem1_schedule(spec.sigma, spec.beta, V, cfg.T, b, Delta)
        if not sched.valid:
            raise ConfigError(
                f"theorem1 schedule invalid: b={b} < 2(sigma+beta)/(gamma-sigma)="
                f"{sched.min_batch:.4g} (gamma={sched.gamma:.4g})")
        gamma, delta = sched.gamma, sched.delta
    else:
        gamma = float(cfg.gamma)
        delta = 8.0 * V * V / ((spec.beta + gamma) * b) if gamma + spec.beta > 0 else math.inf
    if cfg.delta is not None:
        delta = cfg.delta
    if cfg.budget_mode == "tolerance":
        if not gamma > spec.sigma:
            raise ConfigError(
                f"tolerance budgets need gamma > sigma (gamma={gamma:.4g}, sigma={spec.sigma:.4g})")
        if not (delta > 0 and math.isfinite(delta)):
            raise ConfigError("inner tolerance delta must be positive and finite")
    return gamma, delta, Delta


def _budget(cfg, target):
    if cfg.budget_mode == "fixed_steps":
        return SolverBudget.fixed(cfg.g)
    return SolverBudget.tolerance(target, cfg.max_steps)


def _solve(run, obj, x0, target):
    cfg = run.config
    rep = run_solver(cfg.inner_solver, obj, x0, _budget(cfg, target),
                     seed_stream=run.streams.solver, step_size=cfg.lr, momentum=cfg.momentum)
    run.charge(rep.work)
    return rep


def _abort(run, err, t):
    err.trace = list(run.state.trace)
    if err.step is None:
        err.step = t
    return err


def run_mp(spec, config, seed=0, *, run_id="", constants=None, holdout=None,
           callback: Optional[Callable] = None):
    """Minibatch-prox: ``w_t ~ argmin mean_i loss(w, xi_i) + gamma/2 |w - w_{t-1}|^2``.

    Each subproblem uses ``b`` fresh samples and is warm-started at
    ``w_{t-1}``. ``callback(t, w_prev, w_t, report, batch, objective)`` is
    called after every outer step.
    """
    if config.method != "mp":
        raise ConfigError(f"run_mp got method {config.method!r}")
    run = _Run(spec, config, seed, run_id, constants, holdout)
    gamma, delta, Delta = _prox_parameters(run, config.b)
    iterates = []
    for t in range(1, config.T + 1):
        w_prev = run.state.w_prev
        batch = run.draw(config.b)
        obj = make_prox_objective(spec, batch, w_prev, gamma)
        try:
            rep = _solve(run, obj, w_prev, delta)
        except DivergenceError as err:
            raise _abort(run, err, t)
        w = rep.solution
        run.state.t, run.state.w_prev = t, w
        iterates.append(w)
        run.record(t, 0, w, "budget_exhausted" if rep.budget_exhausted else "ok")
        if callback is not None:
            callback(t, w_prev, w, rep, batch, obj)
    return run.finish(iterates, gamma, delta, Delta)


def run_mp_mem(spec, config, seed=0, *, run_id="", constants=None, holdout=None,
               callback: Optional[Callable] = None):
    """Memory-efficient minibatch-prox.

    Outer step ``t`` runs ``S`` inner steps. Inner step ``s`` draws ``m``
    fresh samples and solves, to tolerance ``eta_s``,

        mean_i loss(x, xi_i) + gamma/2 |x - w_{t-1}|^2 + rho_s/2 |x - x_{s-1}|^2

    from ``x_0 = w_{t-1}``. The outer iterate is ``w_t = sum_s q_s x_s``.
    With gamma_mode theorem1, ``gamma`` is computed with ``b = m S``, the samples per outer step.
    The trace has one record per inner step (``s >= 1``, evaluated at
    ``x_s``) followed by one outer record (``s = 0``, at ``w_t``).
    ``callback(t, s, x_prev, x_s, report)`` is called after every inner step.
    """
    if config.method != "mp_mem":
        raise ConfigError(f"run_mp_mem got method {config.method!r}")
    run = _Run(spec, config, seed, run_id, constants, holdout)
    m, S = config.m, config.S
    gamma, delta, Delta = _prox_parameters(run, m * S)
    try:
        inner = inner_schedules(gamma, spec.sigma, spec.beta,
                                math.sqrt(spec.variance_bound), m, S)
    except InvalidInputError as err:
        raise ConfigError(str(err)) from None
    iterates = []
    for t in range(1, config.T + 1):
        w_prev = run.state.w_prev
        x = w_prev
        avg = np.zeros_like(w_prev)
        for s in range(1, S + 1):
            batch = run.draw(m)
            rho = float(inner.rho[s - 1])
            obj = make_prox_objective(spec, batch, w_prev, gamma, center_rho=x, rho=rho)
            try:
                rep = _solve(run, obj, x, float(inner.eta[s - 1]))
            except DivergenceError as err:
                raise _abort(run, err, t)
            if callback is not None:
                callback(t, s, x, rep.solution, rep)
            x = rep.solution
            avg = avg + inner.weights[s - 1] * x
            run.record(t, s, x, "budget_exhausted" if rep.budget_exhausted else "ok")
        run.state.t, run.state.w_prev = t, avg
        iterates.append(avg)
        run.record(t, 0, avg)
    return run.finish(iterates, gamma, delta, Delta)


def run_minibatch_sgd(spec, config, seed=0, *, run_id="", constants=None, holdout=None,
                      callback: Optional[Callable] = None, trace_points=SGD_TRACE_POINTS):
    """Minibatch SGD with heavy-ball momentum.

    ``v_t = momentum v_{t-1} + mean_grad(batch_t, w_{t-1})`` and
    ``w_t = w_{t-1} - lr v_t``. The update and the gradient evaluation are the
    ones used by the prox driver with ``gamma = 0`` and a single
    ``gd_momentum`` step, which makes the two traces bit-identical. A record
    is written every ``ceil(T / trace_points)`` steps and at step ``T``.
    """
    if config.method != "sgd":
        raise ConfigError(f"run_minibatch_sgd got method {config.method!r}")
    run = _Run(spec, config, seed, run_id, constants, holdout)
    Delta = _initial_gap(run)
    every = max(1, math.ceil(config.T / trace_points))
    w = run.state.w_prev
    v = np.zeros_like(w)
    guard = None
    iterates = []
    for t in range(1, config.T + 1):
        batch = run.draw(config.b)
        obj = make_prox_objective(spec, batch, w, 0.0)
        f, g = obj.value_grad(w)
        try:
            if guard is None:
                guard = _Guard(f)
            guard(f, t)
        except DivergenceError as err:
            raise _abort(run, err, t)
        run.charge(WorkCounts(1, 0, config.b))
        w_prev = w
        w, v = heavy_ball_step(w, v, g, config.lr, config.momentum)
        run.state.t, run.state.w_prev = t, w
        iterates.append(w)
        if t % every == 0 or t == config.T:
            run.record(t, 0, w)
        if callback is not None:
            callback(t, w_prev, w, None, batch, obj)
    return run.finish(iterates, 0.0, 0.0, Delta)


DRIVERS = {"mp": run_mp, "mp_mem": run_mp_mem, "sgd": run_minibatch_sgd}


def run(spec, config, seed=0, **kwargs):
    """Dispatch on ``config.method``."""
    return DRIVERS[config.method](spec, config, seed, **kwargs)
