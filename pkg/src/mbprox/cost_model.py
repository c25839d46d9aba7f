"""Simulated distributed cost accounting and the asymptotic regime table.

Two kinds of gradient access are priced separately: a batch gradient on all
``b`` samples of a subproblem (parallelisable, cost ``tau_b``) and a serial
single-sample gradient step (cost ``tau_1``). Energy counts total
single-sample gradient work, so a batch gradient on ``b`` samples costs ``b``
units of energy.

The regime table evaluates the order-of-magnitude complexity of minibatch
SGD, MP with accelerated gradient descent and MP with SVRG as functions of
the minibatch size, with every hidden constant set to 1 and every hidden
logarithm set to ``ln(1/eps)``. Its numbers are in "asymptotic units" and
only their ratios and orderings mean anything.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .errors import InvalidInputError


@dataclass(frozen=True)
class CostConstants:
    tau_b: float = 1.0
    tau_1: float = 0.01
    machines: int = 1

    def __post_init__(self):
        if not (self.tau_b > 0 and self.tau_1 > 0):
            raise InvalidInputError("tau_b and tau_1 must be positive")


@dataclass(frozen=True)
class WorkCounts:
    """Gradient work of one solver call or one driver step."""

    batch_grad_evals: int = 0
    single_grad_evals: int = 0
    batch_size: int = 0


@dataclass(frozen=True)
class CostSummary:
    runtime: float = 0.0
    energy: float = 0.0

    def __add__(self, other):
        return CostSummary(self.runtime + other.runtime, self.energy + other.energy)


def account(trace, constants):
    """Price a sequence of :class:`WorkCounts` increments.

    ``runtime = sum(batch_grad_evals * tau_b + single_grad_evals * tau_1)``
    and ``energy = sum(batch_size * batch_grad_evals + single_grad_evals)``.
    """
    runtime = energy = 0.0
    for w in trace:
        runtime += w.batch_grad_evals * constants.tau_b + w.single_grad_evals * constants.tau_1
        energy += w.batch_size * w.batch_grad_evals + w.single_grad_evals
    return CostSummary(runtime, energy)


# --- regime table ----------------------------------------------------------

METHODS = ("sgd", "mp_agd", "mp_svrg")


@dataclass(frozen=True)
class RegimeRow:
    method: str
    b: float
    regime: str
    grad_steps: float
    serial_steps: float
    predicted_runtime_units: float
    predicted_energy: float
    sample_efficient: bool


def thresholds(sigma, beta, V, epsilon):
    """Largest sample-efficient minibatch sizes ``(b_sgd, b_mp)``.

    ``b_sgd = V^2/eps^2`` and ``b_mp = beta V^2 / (sigma eps^2)``; the latter is
    infinite for ``sigma = 0``.
    """
    b_sgd = (V / epsilon) ** 2
    b_mp = math.inf if sigma == 0 else (beta / sigma) * b_sgd
    return b_sgd, b_mp


def sample_complexity(beta, V, Delta, epsilon):
    """Samples needed for ``E|grad phi|^2 <= eps^2``: ``V^2 beta Delta / eps^4``."""
    return V * V * beta * Delta / epsilon ** 4


def _close(a, b):
    return math.isclose(a, b, rel_tol=1e-9)


def _regime(b, lo, hi):
    """Position of ``b`` relative to the efficient window ``[lo, hi]``.

    Boundaries are compared with a relative tolerance of 1e-9 so that
    thresholds computed in floating point still match integer batch sizes.
    """
    if b < lo and not _close(b, lo):
        return "below"
    if _close(b, hi):
        return "at"
    return "efficient" if b < hi else "above"


def regime_rows(sigma, beta, V, Delta, epsilon, b, constants=None):
    """The three method rows of the regime table at one minibatch size."""
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    constants = constants or CostConstants(1.0, 1.0)
    tb, t1 = constants.tau_b, constants.tau_1
    N = sample_complexity(beta, V, Delta, epsilon)
    b_sgd, b_mp = thresholds(sigma, beta, V, epsilon)
    log = math.log(1.0 / epsilon) if epsilon < 1 else 1.0
    e2v2 = epsilon ** 2 / (V * V)
    rows = []

    if b <= b_sgd or _close(b, b_sgd):
        steps, energy = N / b, N
    else:
        steps, energy = beta * Delta / epsilon ** 2, b * e2v2 * N
    rows.append(RegimeRow("sgd", b, _regime(b, 0.0, b_sgd), steps, 0.0,
                          steps * tb, energy, b <= b_sgd or _close(b, b_sgd)))

    regime = _regime(b, b_sgd, b_mp)
    if regime == "below":
        # MP is not shown to converge below V^2/eps^2
        nan = math.nan
        rows.append(RegimeRow("mp_agd", b, regime, nan, nan, nan, nan, False))
        rows.append(RegimeRow("mp_svrg", b, regime, nan, nan, nan, nan, False))
        return rows
    efficient = regime != "above"
    if efficient:
        steps = math.sqrt(e2v2 / b) * N * log
        energy = math.sqrt(b * e2v2) * N * log
    else:
        steps = (b * e2v2) ** 0.25 * sigma ** 0.75 * beta ** 0.25 * Delta / epsilon ** 2 * log
        energy = (b * e2v2) ** 1.25 * (sigma / beta) ** 0.75 * N * log
    rows.append(RegimeRow("mp_agd", b, regime, steps, 0.0, steps * tb, energy, efficient))

    if efficient:
        batch_steps = N / b * log
        serial = e2v2 * N * log
        energy = N * log
    else:
        batch_steps = sigma * Delta / epsilon ** 2 * log
        serial = math.sqrt(b * e2v2) * math.sqrt(sigma * beta) * Delta / epsilon ** 2 * log
        energy = b * e2v2 * sigma / beta * N * log
    rows.append(RegimeRow("mp_svrg", b, regime, batch_steps, serial,
                          batch_steps * tb + serial * t1, energy, efficient))
    return rows


def regime_table(sigma, beta, V, Delta, epsilon, b_grid, constants=None):
    """Regime-table rows for every ``b`` in ``b_grid`` and every method."""
    if not sigma >= 0 or beta <= 0 or V <= 0 or Delta <= 0:
        raise InvalidInputError("need sigma >= 0 and beta, V, Delta > 0")
    rows = []
    for b in b_grid:
        rows.extend(regime_rows(sigma, beta, V, Delta, epsilon, float(b), constants))
    return rows


def predicted_steps_at_threshold(sigma, beta, V, Delta, epsilon):
    """Gradient steps of SGD at ``b_sgd`` and of MP+AGD at ``b_mp``."""
    b_sgd, b_mp = thresholds(sigma, beta, V, epsilon)
    sgd = next(r for r in regime_rows(sigma, beta, V, Delta, epsilon, b_sgd) if r.method == "sgd")
    mp = next(r for r in regime_rows(sigma, beta, V, Delta, epsilon, b_mp) if r.method == "mp_agd")
    return sgd.grad_steps, mp.grad_steps


REGIME_COLUMNS = ("method", "b", "regime", "grad_steps", "serial_steps",
                  "predicted_runtime_units", "predicted_energy", "sample_efficient")


def regime_table_csv(rows, sigma, beta, V, Delta, epsilon, constants=None):
    """Serialise rows as CSV, preceded by ``#`` lines stating the unit conventions."""
    constants = constants or CostConstants(1.0, 1.0)
    b_sgd, b_mp = thresholds(sigma, beta, V, epsilon)
    log = math.log(1.0 / epsilon) if epsilon < 1 else 1.0
    out = io.StringIO()
    out.write("# units: asymptotic units; all hidden constants = 1; "
              f"hidden log factors = ln(1/eps) = {log:.17g}\n")
    out.write("# energy unit: one single-sample gradient evaluation; "
              f"runtime = grad_steps * tau_b + serial_steps * tau_1 "
              f"(tau_b={constants.tau_b:.17g}, tau_1={constants.tau_1:.17g})\n")
    out.write(f"# sigma={sigma:.17g} beta={beta:.17g} V={V:.17g} Delta={Delta:.17g} "
              f"eps={epsilon:.17g} b_sgd={b_sgd:.17g} b_mp={b_mp:.17g}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REGIME_COLUMNS)
    for r in rows:
        writer.writerow([r.method, f"{r.b:.17g}", r.regime, f"{r.grad_steps:.17g}",
                         f"{r.serial_steps:.17g}", f"{r.predicted_runtime_units:.17g}",
                         f"{r.predicted_energy:.17g}", int(r.sample_efficient)])
    return out.getvalue()
