"""Path functionals, their limit quantities, and exact Brownian-bridge laws.

``h1`` is the Riemann-sum integral, ``h2`` the fraction of the path inside an
interval, ``h3`` the (min, max) pair.  Every functional accepts a single path
(n,) or a batch (R, n) and reduces over the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .geometry import Domain, GridSchedule, volume
from .rng import as_stream

INTERVALS = {"A1": (0.0, 0.5), "A2": (1.0, 2.0), "A3": (-2.5, 0.0)}
N_BATCHES = 20
CHUNK_ELEMENTS = 4_000_000


def _values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise ValueError("need at least one value")
    return v


def h1(domain: Domain, values):
    """``volume * mean(values)``."""
    return volume(domain) * _values(values).mean(axis=-1)


def _check_interval(interval) -> tuple[float, float]:
    a, b = (float(x) for x in interval)
    if not a < b:
        raise ValueError("interval needs a < b")
    return a, b


def h2(values, interval):
    """Fraction of values strictly inside the open interval ``(a, b)``."""
    a, b = _check_interval(interval)
    v = _values(values)
    return ((v > a) & (v < b)).mean(axis=-1)


def h3(values):
    v = _values(values)
    return v.min(axis=-1), v.max(axis=-1)


@dataclass(frozen=True)
class FunctionalResult:
    h1: float
    h2: dict
    h3: tuple
    M: int
    replication: int
    model: str


def evaluate(domain: Domain, values, model: str = "", replication: int = 0,
             intervals=INTERVALS) -> FunctionalResult:
    v = _values(values)
    lo, hi = h3(v)
    return FunctionalResult(float(h1(domain, v)), {k: float(h2(v, iv)) for k, iv in intervals.items()},
                            (float(lo), float(hi)), int(v.shape[-1]), replication, model)


# --------------------------------------------------------------------------
# Monte Carlo summaries

def batch_estimate(x, stat=np.mean, batches: int = N_BATCHES) -> tuple[float, float]:
    """Statistic over all replications, with a standard error from batch statistics.

    Replications are split into ``batches`` contiguous groups; the SE is the
    standard deviation of the group statistics over ``sqrt(batches)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2 * batches:
        raise ValueError(f"need at least {2 * batches} replications for {batches} batches")
    groups = np.array_split(x, batches)
    per = np.array([stat(g) for g in groups])
    return float(stat(x)), float(per.std(ddof=1) / np.sqrt(batches))


def sample_var(x) -> float:
    return float(np.var(x, ddof=1))


# --------------------------------------------------------------------------
# limit quantities for sparse constructions

def partial_sum_limit_coeffs(conds, r: int | None = None) -> np.ndarray:
    """``c_j = sum_i a_ij / n`` over the targets of ``conds``."""
    r = conds.r if r is None else int(r)
    if np.any(conds.counts == 0):
        raise ValueError("every target needs at least one reference neighbour")
    mask = np.arange(conds.nbr.shape[1])[None, :] < conds.counts[:, None]
    return np.bincount(conds.nbr[mask], weights=conds.coeffs[mask], minlength=r) / len(conds)


def mu_g_indicator(mu, sigma, interval):
    """``P(a < mu + sigma W < b)`` for standard normal ``W``."""
    a, b = _check_interval(interval)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    out = stats.norm.cdf((b - mu) / sigma) - stats.norm.cdf((a - mu) / sigma)
    return float(out) if out.ndim == 0 else out


def nngp_h1_conditional_variance(domain: Domain, conds) -> float:
    """``Var(h1 | z_S) = volume^2 * sum(sigma_i^2) / n^2`` for independent targets."""
    n = len(conds)
    return float(volume(domain) ** 2 * np.sum(conds.sd ** 2) / n ** 2)


def block_h1_conditional_variance(domain: Domain, bsets) -> float:
    """``Var(h1 | z_S)`` for block conditionals (one BlockSet, or a list averaged as mPCGP)."""
    if not isinstance(bsets, (list, tuple)):
        bsets = [bsets]
    n = len(bsets[0])
    tot = 0.0
    for bs in bsets:
        for b in bs.blocks:
            s = b.chol.sum(axis=0)
            tot += s @ s
    return float(volume(domain) ** 2 * tot / (n ** 2 * len(bsets) ** 2))


# --------------------------------------------------------------------------
# Brownian bridge

@dataclass(frozen=True)
class BridgeLaws:
    """Exact laws of functionals of a standard Brownian bridge on [0, 1]."""

    integral_mean: float = 0.0
    integral_var: float = 1.0 / 12.0
    max_mean: float = float(np.sqrt(np.pi / 8.0))
    max_var: float = (4.0 - np.pi) / 8.0

    @staticmethod
    def max_density(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x > 0, 4.0 * x * np.exp(-2.0 * x * x), 0.0)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def max_cdf(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x > 0, 1.0 - np.exp(-2.0 * x * x), 0.0)
        return float(out) if out.ndim == 0 else out

    def integral_density(self, x):
        return stats.norm.pdf(x, self.integral_mean, np.sqrt(self.integral_var))


def bb_exact_laws() -> BridgeLaws:
    return BridgeLaws()


# --------------------------------------------------------------------------
# refinement probe

@dataclass(frozen=True)
class ProbeLevel:
    level: int
    M: int
    mean_min: float
    se_min: float
    mean_max: float
    se_max: float


def chunks(reps: int, n: int, budget: int = CHUNK_ELEMENTS):
    """Contiguous replication ranges whose (R, n) batches fit in ``budget``."""
    step = max(1, budget // max(n, 1))
    for start in range(0, reps, step):
        yield range(start, min(reps, start + step))


def nested_level_draws(model, schedule: GridSchedule, levels, reps: int, rng, z_ref=None,
                       mapper=map) -> dict:
    """Per-level ``h1``, min and max for ``reps`` paths drawn once on the finest level.

    Returns arrays of shape (len(levels), reps) under keys ``"h1"``, ``"min"``,
    ``"max"`` plus the level sizes under ``"M"``.  ``mapper`` may be an
    executor's ``map``; results are assembled in replication order.
    """
    levels = sorted(int(x) for x in levels)
    finest = GridSchedule(schedule.domain, schedule.base, levels[-1])
    idx = [GridSchedule(schedule.domain, schedule.base, lv).index_in(finest) for lv in levels]
    prepared = model.prepare(finest.points())
    root = as_stream(rng)
    dom = schedule.domain

    def work(block):
        vals = prepared.simulate(root, block, z_ref)
        out = np.empty((3, len(idx), len(block)))
        for k, ix in enumerate(idx):
            sub = vals[:, ix]
            out[0, k] = h1(dom, sub)
            out[1, k], out[2, k] = h3(sub)
        return out

    parts = np.concatenate(list(mapper(work, list(chunks(reps, prepared.n)))), axis=2)
    return {"levels": levels, "M": [len(ix) for ix in idx],
            "h1": parts[0], "min": parts[1], "max": parts[2]}


def divergence_probe(model, schedule: GridSchedule, levels, reps: int, rng,
                     z_ref=None, batches: int = N_BATCHES) -> list[ProbeLevel]:
    """Monte Carlo means of the path extremes at each refinement level.

    Each replication draws one path on the finest level and restricts it to
    the coarser levels, so every level sees the same path.  ``z_ref`` fixes
    the reference values; otherwise they are redrawn per replication.
    """
    d = nested_level_draws(model, schedule, levels, reps, rng, z_ref)
    out = []
    for k, lv in enumerate(d["levels"]):
        mn, smn = batch_estimate(d["min"][k], batches=batches)
        mx, smx = batch_estimate(d["max"][k], batches=batches)
        out.append(ProbeLevel(lv, d["M"][k], mn, smn, mx, smx))
    return out
