"""Desk-scale experiment runners behind the command line.

Each runner is a pure function of its config: every random quantity comes
from a stream addressed below ``Stream(cfg.seed, cfg.experiment)``, and
replications are computed in fixed-size chunks whose results are assembled in
replication order, so outputs do not depend on the worker count.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .covariance import CovarianceModel, PoweredExponential
from .functionals import (INTERVALS, batch_estimate, bb_exact_laws, block_h1_conditional_variance,
                          chunks, h1, h2, h3, nested_level_draws, nngp_h1_conditional_variance,
                          partial_sum_limit_coeffs, sample_var)
from .geometry import Domain, GridSchedule, make_partition, regular_grid, uniform_locations
from .inference import nngp_structure, optimize_crosscheck, pcgp_structure, profile_mle
from .models import MPCGP, NNGP, PCGP, RNGP
from .pcgp import edge_discontinuity, make_mpcgp, make_pcgp, straddling_pairs
from .rng import Stream
from .sparse_process import (Full, NearestM, Radius, build_reference_factor, make_reference_set,
                             sample_reference, simulate_reference)

HIST_BINS = 80
ROW_HEADER = ("model", "M", "statistic", "mean", "sd", "se", "reps")


@dataclass(frozen=True)
class ResultRow:
    model: str
    M: int
    statistic: str
    mean: float
    sd: float
    se: float
    reps: int

    def astuple(self):
        return (self.model, self.M, self.statistic, self.mean, self.sd, self.se, self.reps)


@dataclass
class RunResult:
    """Files written by a run plus the in-memory tables behind them."""

    out: Path
    files: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


# --------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def histogram_rows(x, lo: float, hi: float, bins: int = HIST_BINS):
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    return [(edges[i], edges[i + 1], int(counts[i])) for i in range(bins)]


def mean_row(model, M, statistic, x) -> ResultRow:
    x = np.asarray(x, dtype=np.float64)
    mean, se = batch_estimate(x)
    return ResultRow(model, int(M), statistic, mean, float(np.std(x, ddof=1)), se, x.size)


def var_row(model, M, statistic, x) -> ResultRow:
    x = np.asarray(x, dtype=np.float64)
    est, se = batch_estimate(x, sample_var)
    return ResultRow(model, int(M), statistic, est, float("nan"), se, x.size)


def write_rows(path: Path, rows) -> Path:
    return write_csv(path, ROW_HEADER, [r.astuple() for r in rows])


# --------------------------------------------------------------------------
# shared setup

def covariance_model(cfg: ExperimentConfig) -> CovarianceModel:
    fam = (PoweredExponential(cfg.phi, cfg.nu) if cfg.phi is not None
           else PoweredExponential.from_phi_nu(cfg.phi_nu, cfg.nu))
    return CovarianceModel(cfg.mu, cfg.sigma2, fam)


def neighbor_rule(cfg: ExperimentConfig):
    if cfg.rule == "nearest":
        return NearestM(cfg.m)
    if cfg.rule == "radius":
        return Radius(cfg.radius)
    return Full()


def m_region(cfg: ExperimentConfig) -> int:
    return cfg.m_region if cfg.m_region is not None else max(cfg.m, 1)


def sparse_model(factor):
    return RNGP(factor) if isinstance(factor.refset.rule, Radius) else NNGP(factor)


class Runner:
    """Executes replication chunks on a thread pool, preserving order."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def replicate(runner: Runner, prepared, root: Stream, reps: int, reducer, z_ref=None) -> dict:
    """Apply ``reducer`` to (R, n) batches of draws and concatenate per key."""
    def work(block):
        return reducer(prepared.simulate(root, block, z_ref))

    parts = runner.map(work, chunks(reps, prepared.n))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass(frozen=True)
class Dataset:
    domain: Domain
    factor: object
    z_ref: np.ndarray


def field_dataset(cfg: ExperimentConfig, root: Stream) -> Dataset:
    """Reference locations, sparse factor and one reference draw shared by all models."""
    dom = Domain(cfg.lower, cfg.upper)
    cov = covariance_model(cfg)
    S = uniform_locations(dom, cfg.r, root.child("dataset", "locations"))
    refset = make_reference_set(S, neighbor_rule(cfg), cfg.ordering,
                                root.child("dataset", "ordering"))
    factor = build_reference_factor(cov, refset)
    z = simulate_reference(factor, root.child("dataset", "reference"))
    return Dataset(dom, factor, z)


def grid_counts(cfg: ExperimentConfig, size: int) -> tuple:
    return (int(size),) * len(cfg.lower)


def capped_sizes(cfg: ExperimentConfig, notes: list) -> list:
    keep = [s for s in cfg.sizes if s ** len(cfg.lower) <= cfg.grid_cap]
    if not keep:
        keep = [int(math.floor(cfg.grid_cap ** (1.0 / len(cfg.lower)) + 1e-9))]
    dropped = [s for s in cfg.sizes if s not in keep]
    if dropped:
        notes.append(f"grid sizes {dropped} skipped: above the cap of {cfg.grid_cap} points")
    return keep


def field_reducer(dom: Domain):
    def reduce(v):
        lo, hi = h3(v)
        out = {"h1": h1(dom, v), "min": lo, "max": hi}
        for name, iv in INTERVALS.items():
            out[f"h2_{name}"] = h2(v, iv)
        return out
    return reduce


def heatmap_rows(ref_locs, z_ref, targets, values):
    rows = [("reference", *p, z) for p, z in zip(ref_locs, z_ref)]
    rows += [("target", *p, v) for p, v in zip(targets, values)]
    return rows


def heatmap_header(d: int):
    return ("kind",) + tuple(f"x{i}" for i in range(d)) + ("value",)


# --------------------------------------------------------------------------
# Brownian bridge

def bridge_setup(cfg: ExperimentConfig):
    """Reference grid ``j/(r+1)``, partition cells between consecutive references."""
    cov = CovarianceModel.brownian_bridge(cfg.sigma2)
    dom = Domain([0.0], [1.0])
    S = (np.arange(1, cfg.r + 1) / (cfg.r + 1))[:, None]
    factor = build_reference_factor(cov, make_reference_set(S, neighbor_rule(cfg), "sorted"))
    part = make_partition(dom, (cfg.r + 1,))
    return dom, factor, make_pcgp(factor, part, m_region(cfg), cfg.cell_cap)


def bridge_targets(cfg: ExperimentConfig, level: int) -> np.ndarray:
    """``2**level`` cell-centred points inside each of the ``r + 1`` reference intervals."""
    return regular_grid(Domain([0.0], [1.0]), ((cfg.r + 1) << level,))


def run_bb(cfg: ExperimentConfig, out: Path, runner: Runner) -> RunResult:
    res = RunResult(out)
    root = Stream(cfg.seed, "bb")
    dom, factor, pcgp_model = bridge_setup(cfg)
    models = [sparse_model(factor), PCGP(pcgp_model)]
    laws = bb_exact_laws()
    sd_int = math.sqrt(laws.integral_var)
    rows, stats = [], {}
    for level in cfg.levels:
        T = bridge_targets(cfg, level)
        if T.shape[0] > cfg.grid_cap:
            res.notes.append(f"level {level} skipped: {T.shape[0]} points above the grid cap")
            continue
        for model in models:
            per_cell = T.shape[0] // (cfg.r + 1)
            if model.tag == "pcgp" and per_cell > cfg.cell_cap:
                res.notes.append(f"pcgp level {level} skipped: {per_cell} targets per cell "
                                 f"exceed the cell cap of {cfg.cell_cap}")
                continue
            prepared = model.prepare(T)
            d = replicate(runner, prepared, root, cfg.replications,
                          lambda v: {"integral": h1(dom, v), "max": v.max(axis=1)})
            M = T.shape[0]
            stats[(model.tag, level)] = d
            rows += [mean_row(model.tag, M, "integral", d["integral"]),
                     var_row(model.tag, M, "integral_var", d["integral"]),
                     mean_row(model.tag, M, "max", d["max"]),
                     var_row(model.tag, M, "max_var", d["max"])]
            res.files.append(write_csv(out / f"hist_{model.tag}_n{level}_integral.csv",
                                       ("bin_left", "bin_right", "count"),
                                       histogram_rows(d["integral"], -4 * sd_int, 4 * sd_int)))
            res.files.append(write_csv(out / f"hist_{model.tag}_n{level}_max.csv",
                                       ("bin_left", "bin_right", "count"),
                                       histogram_rows(d["max"], 0.0, 3.0)))
    xs = np.linspace(-4 * sd_int, 4 * sd_int, 401)
    res.files.append(write_csv(out / "exact_integral.csv", ("x", "density"),
                               zip(xs, laws.integral_density(xs))))
    xm = np.linspace(0.0, 3.0, 401)
    res.files.append(write_csv(out / "exact_max.csv", ("x", "density"),
                               zip(xm, laws.max_density(xm))))
    res.files.append(write_rows(out / "summary.csv", rows))
    res.tables.update(rows=rows, stats=stats, laws=laws)
    return res


# --------------------------------------------------------------------------
# 2-D field tables

def run_field(cfg: ExperimentConfig, out: Path, runner: Runner) -> RunResult:
    res = RunResult(out)
    root = Stream(cfg.seed, "field")
    data = field_dataset(cfg, root)
    dom, factor = data.domain, data.factor
    part = make_partition(dom, cfg.cells)
    models = [sparse_model(factor), PCGP(make_pcgp(factor, part, m_region(cfg), cfg.cell_cap))]
    reps_root = root.child("replications")
    sizes = capped_sizes(cfg, res.notes)
    rows, condvar = [], []
    for size in sizes:
        T = regular_grid(dom, grid_counts(cfg, size), cfg.style, cfg.grid_cap)
        M = T.shape[0]
        for model in models:
            prepared = model.prepare(T)
            d = replicate(runner, prepared, reps_root, cfg.replications, field_reducer(dom), data.z_ref)
            for key in ("h1", "h2_A1", "h2_A2", "h2_A3", "min", "max"):
                rows.append(mean_row(model.tag, M, key, d[key]))
            emp = var_row(model.tag, M, "h1_var", d["h1"])
            if model.tag == "pcgp":
                analytic = block_h1_conditional_variance(dom, prepared.bs)
            else:
                analytic = nngp_h1_conditional_variance(dom, prepared.conds)
            rows.append(emp)
            rows.append(ResultRow(model.tag, M, "h1_var_analytic", analytic, float("nan"), 0.0,
                                  cfg.replications))
            condvar.append((model.tag, M, analytic, emp.mean, emp.se, cfg.replications))
            if size == sizes[-1]:
                one = prepared.simulate(reps_root, [0], data.z_ref)[0]
                res.files.append(write_csv(
                    out / f"heatmap_{model.tag}.csv", heatmap_header(dom.dim),
                    heatmap_rows(factor.refset.locs, data.z_ref, T, one)))
    res.files.append(write_rows(out / "summary.csv", rows))
    res.files.append(write_csv(out / "h1_condvar.csv",
                               ("model", "M", "analytic", "empirical", "se", "reps"), condvar))
    res.tables.update(rows=rows, condvar=condvar)
    return res


# --------------------------------------------------------------------------
# nested schedules

def run_theorem_probe(cfg: ExperimentConfig, out: Path, runner: Runner) -> RunResult:
    res = RunResult(out)
    root = Stream(cfg.seed, "theorem-probe")
    data = field_dataset(cfg, root)
    dom, factor = data.domain, data.factor
    sched = GridSchedule(dom, cfg.base)
    levels = [lv for lv in cfg.levels if GridSchedule(dom, cfg.base, lv).size <= cfg.grid_cap]
    if not levels:
        levels = [cfg.levels[0]]
    if len(levels) < len(cfg.levels):
        res.notes.append(f"levels {sorted(set(cfg.levels) - set(levels))} skipped: above the grid cap")
    part = make_partition(dom, cfg.cells)
    models = [sparse_model(factor), PCGP(make_pcgp(factor, part, m_region(cfg), cfg.cell_cap))]
    reps_root = root.child("replications")
    div, condvar, draws = [], [], {}
    for model in models:
        d = nested_level_draws(model, sched, levels, cfg.replications, reps_root, data.z_ref,
                               mapper=runner.map)
        draws[model.tag] = d
        for k, lv in enumerate(levels):
            mn, smn = batch_estimate(d["min"][k])
            mx, smx = batch_estimate(d["max"][k])
            div.append((model.tag, lv, d["M"][k], mn, smn, mx, smx))
            T = GridSchedule(dom, cfg.base, lv).points()
            prepared = model.prepare(T)
            if model.tag == "pcgp":
                analytic = block_h1_conditional_variance(dom, prepared.bs)
            else:
                analytic = nngp_h1_conditional_variance(dom, prepared.conds)
            emp, se = batch_estimate(d["h1"][k], sample_var)
            condvar.append((model.tag, lv, d["M"][k], analytic, emp, se, cfg.replications))
    traces, prev = [], None
    for lv in levels:
        T = GridSchedule(dom, cfg.base, lv).points()
        c = partial_sum_limit_coeffs(models[0].prepare(T).conds)
        delta = float("nan") if prev is None else float(np.max(np.abs(c - prev)))
        traces.append((lv, T.shape[0], delta, *c))
        prev = c
    res.files.append(write_csv(out / "divergence.csv",
                               ("model", "level", "M", "mean_min", "se_min", "mean_max", "se_max"),
                               div))
    res.files.append(write_csv(out / "h1_condvar.csv",
                               ("model", "level", "M", "analytic", "empirical", "se", "reps"),
                               condvar))
    res.files.append(write_csv(out / "coeff_traces.csv",
                               ("level", "M", "max_delta") + tuple(f"c{j}" for j in range(factor.r)),
                               traces))
    res.tables.update(divergence=div, condvar=condvar, traces=traces, draws=draws)
    return res


# --------------------------------------------------------------------------
# maximum likelihood

def mle_generator(cfg: ExperimentConfig, dom: Domain, root: Stream):
    """Near-exact parent-GP sampler: sequential conditioning on many previous points."""
    cov = covariance_model(cfg)
    locs = uniform_locations(dom, max(cfg.n), root.child("data", "locations"))
    refset = make_reference_set(locs, NearestM(cfg.generator_m), "as-given")
    return build_reference_factor(cov, refset)


def pcgp_cells(cfg: ExperimentConfig, n: int) -> tuple:
    c = max(1, math.ceil(math.sqrt(n / cfg.cell_target)))
    return (c,) * len(cfg.lower)


def run_mle(cfg: ExperimentConfig, out: Path, runner: Runner) -> RunResult:
    res = RunResult(out)
    root = Stream(cfg.seed, "mle")
    dom = Domain(cfg.lower, cfg.upper)
    cov = covariance_model(cfg)
    gen = mle_generator(cfg, dom, root)
    locs = gen.refset.locs
    pcgp_refs = uniform_locations(dom, cfg.pcgp_r, root.child("pcgp", "locations"))
    pcgp_factor = build_reference_factor(
        cov, make_reference_set(pcgp_refs, NearestM(cfg.m), cfg.ordering, root.child("pcgp", "ordering")))
    fits = {}
    for n in cfg.n:
        X = locs[:n]
        nn_ref = make_reference_set(X, NearestM(cfg.m), cfg.ordering, root.child("nngp", "ordering", n))
        nn = nngp_structure(build_reference_factor(cov, nn_ref))
        pc_model = make_pcgp(pcgp_factor, make_partition(dom, pcgp_cells(cfg, n)), m_region(cfg),
                             cfg.cell_cap)
        fits[n] = (nn_ref.order, nn, pcgp_structure(pc_model, X))

    def one(rep):
        w = root.child(rep, "data").normals(gen.r)
        y_all = sample_reference(gen, w)
        rows = []
        for n in cfg.n:
            order, nn, pc = fits[n]
            y = y_all[:n]
            ybar = float(y.mean())
            init = (ybar, float(np.var(y)) or 1.0)
            for tag, st, yy in (("nngp", nn, y[order]), ("pcgp", pc, y)):
                r = profile_mle(st, yy, tag)
                mu_o, s2_o = optimize_crosscheck(st, yy, init)
                diff = max(abs(mu_o - r.mu), abs(s2_o - r.sigma2))
                rows.append((rep, n, tag, r.mu, r.sigma2, r.loglik, r.se_mu, r.se_sigma2, ybar,
                             mu_o, s2_o, diff, r.degenerate))
        return rows

    rows = [row for part in runner.map(one, range(cfg.replications)) for row in part]
    header = ("rep", "n", "model", "mu_hat", "sigma2_hat", "loglik", "se_mu", "se_sigma2", "ybar",
              "opt_mu", "opt_sigma2", "crosscheck_diff", "degenerate")
    res.files.append(write_csv(out / "mle.csv", header, rows))
    summary = []
    for n in cfg.n:
        for tag in ("nngp", "pcgp"):
            sel = [r for r in rows if r[1] == n and r[2] == tag]
            dev = np.array([abs(r[3] - r[8]) for r in sel])
            s2 = np.array([r[4] for r in sel])
            summary.append((n, tag, len(sel), float(dev.mean()), float(np.mean([r[3] for r in sel])),
                            float(s2.mean()), float(s2.min()), float(s2.max()),
                            float(max(r[11] for r in sel)), int(sum(r[12] for r in sel))))
    res.files.append(write_csv(out / "mle_summary.csv",
                               ("n", "model", "reps", "mean_abs_mu_minus_ybar", "mean_mu_hat",
                                "mean_sigma2_hat", "min_sigma2_hat", "max_sigma2_hat",
                                "max_crosscheck_diff", "degenerate_rows"), summary))
    res.tables.update(rows=rows, summary=summary)
    return res


# --------------------------------------------------------------------------
# PCGP vs mPCGP

def run_mpcgp_compare(cfg: ExperimentConfig, out: Path, runner: Runner) -> RunResult:
    res = RunResult(out)
    root = Stream(cfg.seed, "mpcgp-compare")
    data = field_dataset(cfg, root)
    dom, factor = data.domain, data.factor
    size = capped_sizes(cfg, res.notes)[-1]
    counts = grid_counts(cfg, size)
    T = regular_grid(dom, counts, cfg.style, cfg.grid_cap)
    base = make_partition(dom, cfg.cells)
    pairs = straddling_pairs(T, counts, base)
    models = [PCGP(make_pcgp(factor, base, m_region(cfg), cfg.cell_cap)),
              MPCGP(make_mpcgp(factor, dom, cfg.cells, cfg.G, m_region(cfg), cfg.cell_cap))]
    reps_root = root.child("replications")
    rows, edge = [], {}
    for model in models:
        prepared = model.prepare(T)
        d = replicate(runner, prepared, reps_root, cfg.replications,
                      lambda v: {"edge": edge_discontinuity(v, pairs)}, data.z_ref)
        edge[model.tag] = d["edge"]
        rows.append(mean_row(model.tag, T.shape[0], "edge_discontinuity", d["edge"]))
        one = prepared.simulate(reps_root, [0], data.z_ref)[0]
        res.files.append(write_csv(out / f"heatmap_{model.tag}.csv", heatmap_header(dom.dim),
                                   heatmap_rows(factor.refset.locs, data.z_ref, T, one)))
    res.files.append(write_rows(out / "summary.csv", rows))
    res.tables.update(rows=rows, edge=edge, pairs=len(pairs))
    return res


RUNNERS = {
    "bb": run_bb,
    "field": run_field,
    "theorem-probe": run_theorem_probe,
    "mle": run_mle,
    "mpcgp-compare": run_mpcgp_compare,
}


def run_experiment(cfg: ExperimentConfig, out=None, threads: int = 1) -> RunResult:
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    with Runner(threads) as runner:
        return RUNNERS[cfg.experiment](cfg, out, runner)
