"""Experiment configs, seeded replicas, CSV traces and gnuplot scripts.

A config is a JSON object with the blocks ``problem``, ``method``, ``cost``,
``replication``, ``output``, ``regime`` and ``diagnose``; which ones are
required depends on the command. Unknown keys are rejected with the line on
which they appear. All floats are written with 17 significant digits, so
CSV files round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import cost_model, diagnostics, drivers, problems
from .drivers import TRACE_COLUMNS, MethodConfig, TraceRecord
from .errors import ConfigError, DivergenceError, InvalidInputError

OUT_ENV = "MBPROX_OUT"
DEFAULT_OUT = "mbprox-out"

PROBLEM_KEYS = {"family", "dim", "seed", "noise_std", "w_true", "w_true_scale",
                "feature_scale", "design", "hidden", "holdout_size", "phi_star_hint",
                "sigma", "beta", "variance_bound", "probe_radius"}
METHOD_KEYS = {f.name for f in fields(MethodConfig)}
COST_KEYS = {"tau_b", "tau_1", "machines"}
REPLICATION_KEYS = {"seeds", "workers"}
OUTPUT_KEYS = {"directory", "trace_points"}
REGIME_KEYS = {"sigma", "beta", "V", "Delta", "epsilon", "b_grid"}
DIAGNOSE_KEYS = {"probes", "seed", "variance_points", "variance_samples"}
BLOCKS = {"problem": PROBLEM_KEYS, "method": METHOD_KEYS, "cost": COST_KEYS,
          "replication": REPLICATION_KEYS, "output": OUTPUT_KEYS,
          "regime": REGIME_KEYS, "diagnose": DIAGNOSE_KEYS}

SUMMARY_COLUMNS = ("run_id", "seed", "method", "problem_key", "b", "m", "S", "T",
                   "gamma_mode", "gamma",
                   "g", "delta", "Delta", "R", "samples_used", "batch_grad_evals",
                   "single_grad_evals", "sim_runtime", "energy", "pop_obj_selected",
                   "grad_norm_sq_selected", "pop_obj_last", "grad_norm_sq_last")
COMPARE_KEY = ("method", "b", "gamma", "g")
COMPARE_VALUES = ("pop_obj_last", "pop_obj_selected", "grad_norm_sq_selected",
                  "samples_used", "batch_grad_evals", "sim_runtime", "energy")


# --- config -----------------------------------------------------------------

@dataclass
class RunConfig:
    problem: dict = field(default_factory=dict)
    method: Optional[MethodConfig] = None
    cost: cost_model.CostConstants = field(default_factory=cost_model.CostConstants)
    seeds: tuple = ()
    workers: int = 1
    directory: Optional[str] = None
    trace_points: int = drivers.SGD_TRACE_POINTS
    regime: Optional[dict] = None
    diagnose: dict = field(default_factory=dict)
    text: str = ""

    @property
    def problem_key(self):
        blob = json.dumps(self.problem, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(text, key, start=0):
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, start)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _block_start(text, name):
    m = re.compile(r'"%s"\s*:' % re.escape(name)).search(text)
    return m.start() if m else 0


def parse_config(text):
    """Parse and validate a JSON config; errors carry the offending line."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err.msg}", line=err.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", line=1)
    for name, block in raw.items():
        if name not in BLOCKS:
            raise ConfigError(f"unknown block {name!r}", line=_line_of(text, name))
        if not isinstance(block, dict):
            raise ConfigError(f"block {name!r} must be an object", line=_line_of(text, name))
        start = _block_start(text, name)
        for key in block:
            if key not in BLOCKS[name]:
                raise ConfigError(f"unknown key {key!r} in block {name!r}",
                                  line=_line_of(text, key, start))

    def fail(block, key, msg):
        line = _line_of(text, key, _block_start(text, block)) if key else _line_of(text, block)
        return ConfigError(msg, line=line)

    cfg = RunConfig(text=text)
    cfg.problem = dict(raw.get("problem", {}))
    if "problem" in raw:
        for key in ("family", "dim"):
            if key not in cfg.problem:
                raise fail("problem", None, f"problem block needs {key!r}")
    if "method" in raw:
        try:
            cfg.method = MethodConfig(**raw["method"])
        except TypeError as err:
            raise fail("method", None, f"method block: {err}") from None
        except ConfigError as err:
            raise fail("method", None, str(err)) from None
    if "cost" in raw:
        try:
            cfg.cost = cost_model.CostConstants(**raw["cost"])
        except (TypeError, InvalidInputError) as err:
            raise fail("cost", None, f"cost block: {err}") from None
    rep = raw.get("replication", {})
    seeds = rep.get("seeds", [])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise fail("replication", "seeds", "seeds must be a list of nonnegative integers")
    if len(set(seeds)) != len(seeds):
        raise fail("replication", "seeds", "seeds must be distinct")
    cfg.seeds = tuple(seeds)
    cfg.workers = int(rep.get("workers", 1))
    if cfg.workers < 1:
        raise fail("replication", "workers", "workers must be at least 1")
    out = raw.get("output", {})
    cfg.directory = out.get("directory")
    cfg.trace_points = int(out.get("trace_points", drivers.SGD_TRACE_POINTS))
    if cfg.trace_points < 1:
        raise fail("output", "trace_points", "trace_points must be at least 1")
    if "regime" in raw:
        reg = raw["regime"]
        missing = REGIME_KEYS - set(reg)
        if missing:
            raise fail("regime", None, f"regime block needs {sorted(missing)}")
        if not isinstance(reg["b_grid"], list) or not reg["b_grid"]:
            raise fail("regime", "b_grid", "b_grid must be a nonempty list")
        cfg.regime = dict(reg)
    cfg.diagnose = dict(raw.get("diagnose", {}))
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text)


def build_problem(cfg):
    if not cfg.problem:
        raise ConfigError("config has no problem block")
    p = dict(cfg.problem)
    family = p.pop("family")
    n_features = p.pop("dim")
    try:
        return problems.make_problem(family, n_features, **p)
    except InvalidInputError as err:
        raise ConfigError(f"problem block: {err}", line=_line_of(cfg.text, "problem")) from None


def resolve_out(cfg, out=None):
    return Path(out or cfg.directory or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# --- CSV ----------------------------------------------------------------------

def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trace(path, trace):
    _write_csv(path, TRACE_COLUMNS, (r.as_row() for r in trace))


_INT_TRACE = {"seed", "t", "s", "samples_used", "batch_grad_evals", "single_grad_evals"}


def read_trace(path):
    """Parse a trace CSV back into :class:`TraceRecord` objects."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise ConfigError(f"{path}: unexpected trace header")
        out = []
        for row in reader:
            vals = {}
            for name, v in zip(header, row):
                if name in _INT_TRACE:
                    vals[name] = int(v)
                elif name in ("run_id", "method", "quality_flag"):
                    vals[name] = v
                else:
                    vals[name] = float(v)
            out.append(TraceRecord(**vals))
        return out


def read_summary(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ConfigError(f"{path}: not a summary file")
        return list(reader)


# --- running ------------------------------------------------------------------

@dataclass
class ReplicaOutcome:
    seed: int
    trace: list
    summary: Optional[tuple]
    error: Optional[str] = None


def _summary_row(cfg, seed, run_id, res):
    mc = cfg.method
    b = mc.m * mc.S if mc.method == "mp_mem" else mc.b
    g = mc.g if mc.method != "sgd" and mc.budget_mode == "fixed_steps" else 0
    last = res.trace[-1]
    gamma_mode = "none" if mc.method == "sgd" else mc.gamma_mode
    return (run_id, seed, mc.method, cfg.problem_key, b, mc.m, mc.S, mc.T, gamma_mode, res.gamma, g,
            res.delta, res.Delta, res.R, res.samples_used, last.batch_grad_evals,
            last.single_grad_evals, last.sim_runtime, last.energy, res.pop_obj_selected,
            res.grad_norm_sq_selected, res.pop_obj_last, res.grad_norm_sq_last)


def run_replica(cfg, seed, spec=None):
    """Run one seed; divergence is captured, not raised, so partial traces survive."""
    spec = spec or build_problem(cfg)
    run_id = f"{cfg.method.method}-s{seed}"
    kwargs = {"run_id": run_id, "constants": cfg.cost}
    if cfg.method.method == "sgd":
        kwargs["trace_points"] = cfg.trace_points
    try:
        res = drivers.run(spec, cfg.method, seed, **kwargs)
    except DivergenceError as err:
        return ReplicaOutcome(seed, err.trace or [], None, str(err))
    return ReplicaOutcome(seed, res.trace, _summary_row(cfg, seed, run_id, res))


def _replica_job(args):
    cfg, seed = args
    return run_replica(cfg, seed)


def run_experiment(cfg, out=None, seeds=None, log=None):
    """Run all seeds, write ``trace_s<seed>.csv``, ``summary.csv`` and ``plot.gp``.

    Returns the exit status: 0 on success, 3 if any replica diverged (its
    partial trace is still written). Outputs are merged in seed order.
    """
    if cfg.method is None:
        raise ConfigError("config has no method block")
    seeds = tuple(seeds) if seeds else cfg.seeds
    if not seeds:
        raise ConfigError("no seeds given", line=_line_of(cfg.text, "replication"))
    spec = build_problem(cfg)
    out = resolve_out(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(min(cfg.workers, len(seeds))) as pool:
            outcomes = list(pool.map(_replica_job, [(cfg, s) for s in seeds]))
    else:
        outcomes = [run_replica(cfg, s, spec) for s in seeds]
    status = 0
    for oc in outcomes:
        write_trace(out / f"trace_s{oc.seed}.csv", oc.trace)
        if oc.error is not None:
            status = 3
            if log:
                log(f"seed {oc.seed}: diverged: {oc.error}")
        elif log:
            log(f"seed {oc.seed}: final objective {oc.summary[-2]:.6g}")
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS,
               [oc.summary for oc in outcomes if oc.summary is not None])
    (out / "plot.gp").write_text(trace_plot_script(outcomes))
    return status


# --- plots ------------------------------------------------------------------------

def _datablock(name, header, rows):
    lines = [f"${name} << EOD", "# " + " ".join(header)]
    lines += [" ".join(fmt(v) for v in row) for row in rows]
    lines.append("EOD")
    return "\n".join(lines)


def trace_plot_script(outcomes):
    """Gnuplot script: objective against fresh samples and against updates."""
    blocks, by_samples, by_updates = [], [], []
    for oc in outcomes:
        name = f"seed{oc.seed}"
        rows = [(r.samples_used, r.batch_grad_evals + r.single_grad_evals, r.pop_obj_est)
                for r in oc.trace if r.s == 0]
        blocks.append(_datablock(name, ("samples", "updates", "objective"), rows))
        by_samples.append(f"${name} using 1:3 with lines title 'seed {oc.seed}'")
        by_updates.append(f"${name} using 2:3 with lines title 'seed {oc.seed}'")
    return "\n".join([
        *blocks,
        "set terminal pngcairo size 1200,450",
        "set output 'traces.png'",
        "set multiplot layout 1,2",
        "set logscale y",
        "set xlabel '# fresh samples'; set ylabel 'holdout objective'",
        "plot " + ", ".join(by_samples) if by_samples else "",
        "set xlabel '# gradient evaluations'",
        "plot " + ", ".join(by_updates) if by_updates else "",
        "unset multiplot", ""])


# --- compare ------------------------------------------------------------------------

def compare(summary_paths, out):
    """Median over seeds per ``(method, b, gamma, g)``; writes ``comparison.csv`` and ``compare.gp``.

    Runs with gamma_mode theorem1 derive ``gamma`` from each seed's initial gap, so they are
    grouped under the label ``theorem1`` rather than by value.
    """
    if len(summary_paths) < 2:
        raise ConfigError("compare needs at least two summaries")
    rows = []
    for p in summary_paths:
        try:
            rows.extend(read_summary(p))
        except OSError as err:
            raise ConfigError(f"cannot read {p}: {err.strerror}") from None
    keys = {r["problem_key"] for r in rows}
    if len(keys) > 1:
        raise ConfigError(f"summaries come from incompatible problem blocks: {sorted(keys)}")
    groups = {}
    for r in rows:
        gamma = "theorem1" if r["gamma_mode"] == "theorem1" else float(r["gamma"])
        k = (r["method"], int(r["b"]), gamma, int(r["g"]))
        groups.setdefault(k, []).append(r)
    header = (*COMPARE_KEY, "runs", *(f"median_{v}" for v in COMPARE_VALUES))
    table = []
    for k in sorted(groups, key=lambda k: (k[0], k[1], str(k[2]), k[3])):
        g = groups[k]
        meds = [statistics.median(float(r[v]) for r in g) for v in COMPARE_VALUES]
        table.append((*k, len(g), *meds))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "comparison.csv", header, table)
    (out / "compare.gp").write_text(compare_plot_script(table))
    return table


def compare_plot_script(table):
    """Final objective against samples and against updates, one point per group."""
    col = {name: 5 + i for i, name in enumerate(COMPARE_VALUES)}
    rows = [(i, r[col["pop_obj_last"]], r[col["batch_grad_evals"]], r[col["samples_used"]])
            for i, r in enumerate(table)]
    labels = [f"{r[0]} b={r[1]} gamma={fmt(r[2])} g={r[3]}" for r in table]
    block = _datablock("groups", ("index", "objective", "updates", "samples"), rows)
    lines = [block, "set terminal pngcairo size 1200,450", "set output 'compare.png'",
             "set multiplot layout 1,2", "set logscale xy",
             "set xlabel '# fresh samples'; set ylabel 'median final objective'"]
    if rows:
        lines.append("plot " + ", ".join(
            f"$groups every ::{i}::{i} using 4:2 with points title '{lab}'"
            for i, lab in enumerate(labels)))
        lines.append("set xlabel '# gradient evaluations'")
        lines.append("plot " + ", ".join(
            f"$groups every ::{i}::{i} using 3:2 with points title '{lab}'"
            for i, lab in enumerate(labels)))
    lines += ["unset multiplot", ""]
    return "\n".join(lines)


# --- regime table and diagnostics ---------------------------------------------

def emit_regime_table(cfg, out=None):
    """Write ``regime_table.csv`` from the ``regime`` block; returns its text."""
    if cfg.regime is None:
        raise ConfigError("config has no regime block")
    r = cfg.regime
    try:
        rows = cost_model.regime_table(r["sigma"], r["beta"], r["V"], r["Delta"],
                                       r["epsilon"], r["b_grid"], cfg.cost)
    except InvalidInputError as err:
        raise ConfigError(f"regime block: {err}", line=_line_of(cfg.text, "regime")) from None
    text = cost_model.regime_table_csv(rows, r["sigma"], r["beta"], r["V"], r["Delta"],
                                       r["epsilon"], cfg.cost)
    out = resolve_out(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "regime_table.csv").write_text(text)
    return text


def diagnose(cfg, out=None, checks=20):
    """Compare configured constants with probe estimates; writes ``constants.json``."""
    spec = build_problem(cfg)
    d = cfg.diagnose
    seed = int(d.get("seed", 0))
    est = diagnostics.estimate_constants(
        spec, probes=int(d.get("probes", 2000)), seed=seed,
        variance_points=int(d.get("variance_points", 10)),
        variance_samples=int(d.get("variance_samples", 2000)))
    rng = np.random.default_rng([seed, 7])
    R = spec.probe_radius
    worst = 0.0
    for _ in range(checks):
        w = rng.uniform(-R, R, spec.dim)
        xi = problems.draw_batch(spec, rng, 1)[0]
        worst = max(worst, diagnostics.gradient_check(spec, w, xi))
    report = {
        "family": spec.name, "dim": spec.dim,
        "configured": {"sigma": spec.sigma, "beta": spec.beta,
                       "variance_bound": spec.variance_bound},
        "estimated": est.as_dict(),
        "consistent": bool(est.beta_hat <= spec.beta and est.sigma_hat <= spec.sigma
                           and est.V_sq_hat <= spec.variance_bound),
        "gradient_check_max_rel_error": worst,
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    out = resolve_out(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "constants.json").write_text(text)
    return report
