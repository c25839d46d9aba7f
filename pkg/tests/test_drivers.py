import math

import numpy as np
import pytest

from mbprox import drivers, problems
from mbprox.drivers import MPState, MethodConfig, TraceRecord, trace_append
from mbprox.errors import ConfigError, DivergenceError, InvalidInputError

import oracles
from conftest import ridge_solution


@pytest.fixture(scope="module")
def quad():
    return problems.make_problem("squared", 5, seed=0, noise_std=0.5, holdout_size=2000)


def _record(t, samples, value=1.0):
    return TraceRecord("r", 0, "mp", t, 0, samples, t, 0, float(t), float(samples), value, value)


# --- trace ---------------------------------------------------------------------

def test_trace_append_to_empty():
    state = trace_append(MPState(), _record(1, 10))
    assert len(state.trace) == 1


def test_trace_counters_monotone_over_many_appends():
    state = MPState()
    for t in range(1, 10_001):
        trace_append(state, _record(t, 5 * t))
    samples = [r.samples_used for r in state.trace]
    assert len(samples) == 10_000 and all(a <= b for a, b in zip(samples, samples[1:]))
    with pytest.raises(InvalidInputError):
        trace_append(state, _record(1, 0))


def test_nan_record_is_flagged_not_dropped():
    state = trace_append(MPState(), _record(1, 10, value=math.nan))
    assert len(state.trace) == 1 and state.trace[0].quality_flag == "nan"


# --- minibatch-prox ---------------------------------------------------------------

def test_single_step_matches_ridge_closed_form(quad):
    gamma = 0.8
    seen = {}

    def grab(t, w_prev, w, rep, batch, obj):
        seen.update(w_prev=w_prev, w=w, batch=batch)

    cfg = MethodConfig("mp", T=1, b=1, gamma_mode="fixed", gamma=gamma, delta=1e-22,
                       w0_scale=0.5, max_steps=100_000)
    drivers.run_mp(quad, cfg, 4, callback=grab)
    exact = ridge_solution(seen["batch"], seen["w_prev"], gamma)
    assert np.allclose(seen["w"], exact, atol=1e-9)


def test_gamma_zero_single_step_is_minibatch_sgd(quad):
    mp = MethodConfig("mp", T=40, b=16, gamma_mode="fixed", gamma=0.0,
                      inner_solver="gd_momentum", budget_mode="fixed_steps", g=1, lr=0.7)
    sgd = MethodConfig("sgd", T=40, b=16, lr=0.7)
    a, b = drivers.run(quad, mp, 9), drivers.run(quad, sgd, 9)
    assert [r.as_row()[3:] for r in a.trace] == [r.as_row()[3:] for r in b.trace]
    assert np.array_equal(a.iterates, b.iterates) and a.R == b.R


@pytest.mark.parametrize("solver", ["agd", "svrg", "gd_momentum"])
def test_mp_sample_accounting(quad, solver):
    cfg = MethodConfig("mp", T=7, b=13, inner_solver=solver)
    res = drivers.run(quad, cfg, 1)
    assert res.samples_used == 7 * 13 == res.trace[-1].samples_used
    assert [r.samples_used for r in res.trace] == [13 * t for t in range(1, 8)]


def test_implicit_update_identity_with_tight_solves(quad):
    norms = []

    def check(t, w_prev, w, rep, batch, obj):
        assert rep.certified_subopt_bound <= 1e-10
        g = problems.mean_grad(quad, w, batch) + obj.gamma * (w - w_prev)
        norms.append(np.linalg.norm(g))

    cfg = MethodConfig("mp", T=10, b=30, delta=1e-12, max_steps=100_000)
    drivers.run_mp(quad, cfg, 2, callback=check)
    assert len(norms) == 10 and max(norms) <= 1e-4


def test_gradient_norm_descent_inequality(quad):
    gamma = 1.0
    g2, move2, eps = oracles.descent_terms(quad, gamma, 1e-3, range(100), T=1)
    rhs = 2 * gamma ** 2 * move2.mean() + 4 * (quad.beta + gamma) * eps.mean()
    assert g2.mean() <= 1.2 * rhs


def test_stability_bound_on_two_dim_quadratic():
    spec = problems.make_problem("squared", 2, seed=0, noise_std=0.5)
    gamma = 1.0
    for b in (8, 32):
        assert oracles.stability_gap(spec, gamma, b, 10_000, seed=b) <= 1.2 * oracles.stability_bound(
            spec, gamma, b)


def test_invalid_schedule_is_a_config_error():
    spec = problems.make_problem("squared", 3, variance_bound=0.0)
    with pytest.raises(ConfigError):
        drivers.run(spec, MethodConfig("mp", T=5, b=10), 0)


def test_tolerance_budget_needs_gamma_above_sigma():
    spec = problems.make_problem("sigmoid", 3)
    cfg = MethodConfig("mp", T=2, b=10, gamma_mode="fixed", gamma=0.5 * spec.sigma)
    with pytest.raises(ConfigError):
        drivers.run(spec, cfg, 0)


def test_runs_are_deterministic(quad):
    cfg = MethodConfig("mp", T=5, b=20, inner_solver="svrg")
    a, b = drivers.run(quad, cfg, 3), drivers.run(quad, cfg, 3)
    assert [r.as_row() for r in a.trace] == [r.as_row() for r in b.trace]
    assert np.array_equal(a.selected, b.selected)


def test_divergence_keeps_partial_trace(quad):
    cfg = MethodConfig("sgd", T=50, b=4, lr=100.0)
    with pytest.raises(DivergenceError) as err:
        drivers.run(quad, cfg, 0)
    assert err.value.trace is not None and len(err.value.trace) >= 1


# --- memory-efficient variant ------------------------------------------------------

def test_single_inner_step_equals_plain_mp(quad):
    common = dict(T=6, gamma_mode="fixed", gamma=2.0, inner_solver="gd_momentum",
                  budget_mode="fixed_steps", g=5, lr=0.3)
    a = drivers.run(quad, MethodConfig("mp_mem", m=25, S=1, **common), 5)
    b = drivers.run(quad, MethodConfig("mp", b=25, **common), 5)
    assert np.array_equal(a.iterates, b.iterates)


def test_memory_efficient_sample_accounting(quad):
    res = drivers.run(quad, MethodConfig("mp_mem", T=3, m=10, S=4, inner_solver="svrg"), 0)
    assert res.samples_used == 3 * 10 * 4
    outer = [r for r in res.trace if r.s == 0]
    assert [r.samples_used for r in outer] == [40, 80, 120]
    assert [r.s for r in res.trace[:5]] == [1, 2, 3, 4, 0]


def test_memory_efficient_inner_bound(quad):
    gaps = oracles.memory_efficient_gaps(quad, 1.0, 8, 4, range(50))
    assert np.median(gaps) <= 2 * oracles.inner_loop_bound(quad, 1.0, 8, 4)


def test_memory_efficient_flags_exhausted_inner_steps(quad):
    cfg = MethodConfig("mp_mem", T=1, m=10, S=10, max_steps=1, w0_scale=3.0)
    res = drivers.run(quad, cfg, 0)
    assert any(r.quality_flag == "budget_exhausted" for r in res.trace if r.s > 0)


def test_memory_efficient_rejects_small_inner_batches(quad):
    cfg = MethodConfig("mp_mem", T=1, m=1, S=2, gamma_mode="fixed", gamma=0.01)
    with pytest.raises(ConfigError):
        drivers.run(quad, cfg, 0)


# --- minibatch SGD ---------------------------------------------------------------

def test_sgd_with_inverse_beta_step_descends_every_step():
    spec = problems.make_problem("squared", 6, seed=2, noise_std=0.0)
    values = []

    def track(t, w_prev, w, rep, batch, obj):
        values.append((problems.squared_population(spec, w_prev)[0],
                       problems.squared_population(spec, w)[0]))

    drivers.run(spec, MethodConfig("sgd", T=100, b=8, lr=1.0 / spec.beta), 0, callback=track)
    assert all(after < before for before, after in values)


def test_sgd_step_is_gradient_descent_on_its_batch(quad):
    def check(t, w_prev, w, rep, batch, obj):
        assert np.array_equal(w, w_prev - 0.4 * problems.mean_grad(quad, w_prev, batch))

    drivers.run(quad, MethodConfig("sgd", T=20, b=50, lr=0.4), 0, callback=check)


def test_sgd_sample_accounting_and_cadence(quad):
    res = drivers.run(quad, MethodConfig("sgd", T=1200, b=3, lr=0.1), 0)
    assert res.samples_used == 3600
    assert len(res.trace) == 400 and res.trace[-1].t == 1200
    assert all(r.samples_used == 3 * r.t for r in res.trace)


def test_method_config_validation():
    with pytest.raises(ConfigError):
        MethodConfig("sgd", T=10, b=5)
    with pytest.raises(ConfigError):
        MethodConfig("mp", T=10, b=5, gamma_mode="fixed")
    with pytest.raises(ConfigError):
        MethodConfig("mp_mem", T=10, m=5)
    with pytest.raises(ConfigError):
        MethodConfig("adam", T=10, b=5)
