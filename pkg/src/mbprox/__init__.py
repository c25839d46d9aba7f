"""Minibatch-prox methods for stochastic nonconvex optimisation."""

from .cost_model import CostConstants, WorkCounts, account, regime_table
from .drivers import MethodConfig, TraceRecord, run, run_minibatch_sgd, run_mp, run_mp_mem
from .errors import ConfigError, DivergenceError, InvalidInputError
from .problems import Batch, ProblemSpec, Sample, draw_batch, make_problem
from .prox import make_prox_objective, theorem1_schedule
from .solvers import SolverBudget, agd_strongly_convex, gd_momentum, svrg

__all__ = [
    "Batch", "ConfigError", "CostConstants", "DivergenceError", "InvalidInputError",
    "MethodConfig", "ProblemSpec", "Sample", "SolverBudget", "TraceRecord", "WorkCounts",
    "account", "agd_strongly_convex", "draw_batch", "gd_momentum", "make_problem",
    "make_prox_objective", "regime_table", "run", "run_minibatch_sgd", "run_mp",
    "run_mp_mem", "svrg", "theorem1_schedule",
]
