"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from mbprox import cli, cost_model, diagnostics, drivers, harness, problems, solvers
from mbprox.drivers import MethodConfig
from mbprox.solvers import SolverBudget

import oracles
from conftest import random_quadratic

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok
    return emit


def test_1_gradient_correctness(report):
    start = time.perf_counter()
    worst = {}
    for spec in (problems.make_problem("logistic", 6, seed=1),
                 problems.make_problem("squared", 6, seed=1),
                 problems.make_problem("sigmoid", 6, seed=1),
                 problems.make_problem("two_layer", 3, hidden=4, seed=1)):
        rng = np.random.default_rng(7)
        errs = []
        for _ in range(100):
            w = rng.uniform(-spec.probe_radius, spec.probe_radius, spec.dim)
            xi = problems.draw_batch(spec, rng, 1)[0]
            errs.append(diagnostics.gradient_check(spec, w, xi))
        worst[spec.name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and elapsed < 5
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"max rel error {detail}; {elapsed:.1f}s")


def test_2_solver_oracle_equivalence(report):
    start = time.perf_counter()
    worst_dist, violations, uncertified = 0.0, 0, 0
    for name in ("agd", "svrg"):
        for seed in range(100):
            obj, w_star, f_star, rng = random_quadratic(1000 + seed)
            # certificate at this target pins the point to 1e-7 of the minimiser
            target = obj.strong_convexity * 1e-14 / 2
            rep = solvers.run_solver(name, obj, rng.standard_normal(obj.dim),
                                     SolverBudget.tolerance(target, 500_000), seed_stream=seed)
            uncertified += not rep.certified
            worst_dist = max(worst_dist, float(np.linalg.norm(rep.solution - w_star)))
            violations += obj.value(rep.solution) - f_star > rep.certified_subopt_bound + 1e-15
    elapsed = time.perf_counter() - start
    ok = worst_dist <= 1e-6 and violations == 0 and uncertified == 0 and elapsed < 30
    assert report(2, ok, f"max |w - w*| {worst_dist:.1e}, certificate violations {violations}, "
                         f"uncertified {uncertified}; {elapsed:.1f}s")


def test_3_sgd_equivalence(report):
    spec = problems.make_problem("sigmoid", 8, seed=3, holdout_size=2000)
    mp = MethodConfig("mp", T=300, b=32, gamma_mode="fixed", gamma=0.0,
                      inner_solver="gd_momentum", budget_mode="fixed_steps", g=1, lr=0.8)
    sgd = MethodConfig("sgd", T=300, b=32, lr=0.8)
    a, b = drivers.run(spec, mp, 11), drivers.run(spec, sgd, 11)
    # run_id and method name differ by construction; every numeric column must match
    def numeric(rec):
        row = rec.as_row()
        return row[1:2] + row[3:]

    same = [numeric(r) for r in a.trace] == [numeric(r) for r in b.trace]
    same = same and np.array_equal(a.iterates, b.iterates) and a.R == b.R
    assert report(3, same, f"{len(a.trace)} trace rows compared, identical={same}")


def test_4_descent_inequality(report):
    start = time.perf_counter()
    spec = problems.make_problem("squared", 5, seed=0, noise_std=0.5)
    gamma = 1.0
    g2, move2, eps = oracles.descent_terms(spec, gamma, 1e-3, range(200), T=1)
    lhs = g2.mean()
    rhs = 2 * gamma ** 2 * move2.mean() + 4 * (spec.beta + gamma) * eps.mean()
    elapsed = time.perf_counter() - start
    ok = len(g2) == 200 and lhs <= 1.2 * rhs and elapsed < 60
    assert report(4, ok, f"mean |grad|^2 {lhs:.4g} vs 1.2*rhs {1.2 * rhs:.4g}; {elapsed:.1f}s")


def test_5_stability_bound(report):
    start = time.perf_counter()
    spec = problems.make_problem("squared", 2, seed=0, noise_std=0.5)
    gamma = 1.0
    gaps = {b: oracles.stability_gap(spec, gamma, b, 10_000, seed=b) for b in (8, 32, 128)}
    bounds = {b: 1.2 * oracles.stability_bound(spec, gamma, b) for b in gaps}
    elapsed = time.perf_counter() - start
    ok = (all(gaps[b] <= bounds[b] for b in gaps) and gaps[8] > gaps[32] > gaps[128]
          and elapsed < 120)
    detail = ", ".join(f"b={b}: {gaps[b]:.3g} <= {bounds[b]:.3g}" for b in gaps)
    assert report(5, ok, f"{detail}; {elapsed:.1f}s")


def test_6_inner_loop_bound(report):
    start = time.perf_counter()
    spec = problems.make_problem("squared", 5, seed=0, noise_std=0.5)
    gamma, m = 1.0, 8
    med, bound = {}, {}
    for S in (4, 16):
        med[S] = float(np.median(oracles.memory_efficient_gaps(spec, gamma, m, S, range(50))))
        bound[S] = 2 * oracles.inner_loop_bound(spec, gamma, m, S)
    elapsed = time.perf_counter() - start
    ok = all(med[S] <= bound[S] for S in med) and med[16] < med[4] and elapsed < 120
    detail = ", ".join(f"S={S}: median {med[S]:.3g} <= {bound[S]:.3g}" for S in med)
    assert report(6, ok, f"{detail}; {elapsed:.1f}s")


def test_7_large_minibatch_trend(report):
    start = time.perf_counter()
    N, seeds = 200_000, range(7)
    spec = problems.make_problem("sigmoid", 20, seed=0, noise_std=0.1, holdout_size=20_000)

    def median_final(cfg):
        return statistics.median(drivers.run(spec, cfg, s).pop_obj_last for s in seeds)

    # each batch size gets its best step size from the same grid
    sgd = {b: min(median_final(MethodConfig("sgd", T=N // b, b=b, lr=lr)) for lr in (0.3, 1.0, 3.0))
           for b in (200, 10_000)}
    mp = median_final(MethodConfig("mp", T=N // 10_000, b=10_000, inner_solver="agd"))
    elapsed = time.perf_counter() - start
    part_a = sgd[10_000] > sgd[200]
    gap = (mp - sgd[200]) / sgd[200]
    part_b = gap <= 0.10
    ok = part_a and part_b and elapsed < 600
    assert report(7, ok, f"(a) SGD b=200 {sgd[200]:.4g} < b=1e4 {sgd[10_000]:.4g}: {part_a}; "
                         f"(b) MP b=1e4 {mp:.4g}, relative gap {gap:.1%}: {part_b}; "
                         f"{elapsed:.0f}s")


def test_8_regime_table_ordering(report):
    start = time.perf_counter()
    sigma, beta, V, Delta, eps = 0.01, 1.0, 1.0, 1.0, 0.1
    sgd_steps, mp_steps = cost_model.predicted_steps_at_threshold(sigma, beta, V, Delta, eps)
    b_sgd, b_mp = cost_model.thresholds(sigma, beta, V, eps)
    rows = cost_model.regime_table(sigma, beta, V, Delta, eps, [b_sgd, b_mp])
    emitted = {(r.method, r.b): r.grad_steps for r in rows}
    consistent = emitted[("sgd", b_sgd)] == sgd_steps and emitted[("mp_agd", b_mp)] == mp_steps
    elapsed = time.perf_counter() - start
    ok = mp_steps < sgd_steps and consistent and elapsed < 1
    assert report(8, ok, f"SGD {sgd_steps:.4g} steps at b={b_sgd:.4g}, "
                         f"MP+AGD {mp_steps:.4g} steps at b={b_mp:.4g}; {elapsed * 1e3:.0f}ms")


def _closed_form_samples(method):
    if method.get("method") == "mp_mem":
        return method["m"] * method["S"] * method["T"]
    return method["b"] * method["T"]


def test_9_determinism_and_accounting(report, tmp_path):
    start = time.perf_counter()
    problems_found = []
    for path in sorted(CONFIGS.glob("*.json")):
        raw = json.loads(path.read_text())
        outputs = []
        for rep in ("a", "b"):
            out = tmp_path / path.stem / rep
            command = "run" if "method" in raw else "regime-table"
            if cli.main([command, str(path), "--out", str(out), "--quiet"]) != 0:
                problems_found.append(f"{path.name} exit code")
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outputs[0] != outputs[1] or not outputs[0]:
            problems_found.append(f"{path.name} not byte-identical")
        if "method" in raw:
            expected = _closed_form_samples(raw["method"])
            rows = harness.read_summary(tmp_path / path.stem / "a" / "summary.csv")
            if any(int(r["samples_used"]) != expected for r in rows):
                problems_found.append(f"{path.name} samples_used")
    elapsed = time.perf_counter() - start
    ok = not problems_found and elapsed < 60
    assert report(9, ok, f"{len(list(CONFIGS.glob('*.json')))} configs, "
                         f"issues {problems_found or 'none'}; {elapsed:.1f}s")
