"""Vecchia-type processes on an ordered reference set (NNGP, RNGP, full).

The reference set carries a directed neighbour structure; each node's
conditional law given its neighbours comes from the parent GP.  Locations off
the reference set are conditionally independent given the reference values,
each depending on its own neighbour subset of the reference set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.spatial import cKDTree

from ._backend import kernels
from .covariance import JITTER, LOG_2PI, CovarianceModel, SingularCovarianceError
from .geometry import as_points, knn_indices, predecessor_knn, predecessor_radius, radius_indices
from .rng import as_stream

SD_FLOOR = 1e-12
IMPLIED_CAP = 4_000_000


@dataclass(frozen=True)
class NearestM:
    m: int

    def __post_init__(self):
        if int(self.m) < 0:
            raise ValueError("m must be >= 0")


@dataclass(frozen=True)
class Radius:
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class Full:
    pass


NeighborRule = NearestM | Radius | Full


def order_reference(locs, rule: str = "sorted", rng=None) -> np.ndarray:
    """Permutation putting ``locs`` in reference order.

    ``"sorted"`` is lexicographic in the coordinates (first axis first),
    ``"random"`` a seeded shuffle, ``"as-given"`` the identity.
    """
    pts = as_points(locs)
    if pts.shape[0] == 0:
        raise ValueError("reference set must be nonempty")
    if rule == "as-given":
        return np.arange(pts.shape[0])
    if rule == "sorted":
        return np.lexsort(pts.T[::-1])
    if rule == "random":
        if rng is None:
            raise ValueError("random ordering needs a stream or seed")
        return as_stream(rng).permutation(pts.shape[0])
    raise ValueError(f"unknown ordering rule {rule!r}")


def _pad(lists, r: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.array([len(x) for x in lists], dtype=np.int64)
    w = max(1, int(counts.max(initial=0)))
    nbr = np.full((r, w), -1, dtype=np.int64)
    for i, x in enumerate(lists):
        nbr[i, :len(x)] = x
    return nbr, counts


@dataclass(frozen=True)
class ReferenceSet:
    """Ordered reference locations and their directed neighbour sets.

    ``nbr[i, :counts[i]]`` holds the neighbour indices of node ``i``, all
    smaller than ``i``; unused slots are ``-1``.
    """

    locs: np.ndarray
    order: np.ndarray
    ordering: str
    rule: NeighborRule
    nbr: np.ndarray
    counts: np.ndarray

    @property
    def r(self) -> int:
        return self.locs.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self.nbr[i, :self.counts[i]]


def make_reference_set(locs, rule: NeighborRule, ordering: str = "sorted", rng=None) -> ReferenceSet:
    pts = as_points(locs)
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise ValueError("duplicate reference locations")
    perm = order_reference(pts, ordering, rng)
    ordered = np.ascontiguousarray(pts[perm])
    r = ordered.shape[0]
    if isinstance(rule, NearestM):
        nbr, counts = predecessor_knn(ordered, rule.m)
        if nbr.shape[1] == 0:
            nbr = np.full((r, 1), -1, dtype=np.int64)
    elif isinstance(rule, Radius):
        nbr, counts = _pad(predecessor_radius(ordered, rule.R), r)
    elif isinstance(rule, Full):
        nbr, counts = _pad([np.arange(i) for i in range(r)], r)
    else:
        raise TypeError(f"unknown neighbour rule {rule!r}")
    return ReferenceSet(ordered, perm, ordering, rule, np.ascontiguousarray(nbr), counts)


def _vecchia(model: CovarianceModel, nodes, cands, nbr, counts, what: str):
    coeffs, condvar, status = kernels.vecchia_factor(
        nodes, cands, nbr, counts, *model.kernel_args(), JITTER * model.variance)
    bad = np.flatnonzero(status == 2)
    if bad.size:
        i = int(bad[0])
        raise SingularCovarianceError(
            f"{what} {i}: conditioning set {nbr[i, :counts[i]].tolist()} is singular "
            "even after jitter")
    return coeffs, condvar


def _sd(condvar: np.ndarray, variance: float) -> np.ndarray:
    floor = (SD_FLOOR ** 2) * variance
    return np.sqrt(np.maximum(condvar, floor))


def _sparse_rows(nbr, counts, coeffs, ncols: int) -> sparse.csr_matrix:
    n = nbr.shape[0]
    mask = np.arange(nbr.shape[1])[None, :] < counts[:, None]
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return sparse.csr_matrix((coeffs[mask], nbr[mask], indptr), shape=(n, ncols))


@dataclass(frozen=True)
class SparseFactor:
    """Per-node conditional coefficients and variances on the reference set."""

    model: CovarianceModel
    refset: ReferenceSet
    coeffs: np.ndarray
    condvar: np.ndarray

    @property
    def r(self) -> int:
        return self.refset.r

    @property
    def sd(self) -> np.ndarray:
        return _sd(self.condvar, self.model.variance)

    def B(self) -> sparse.csr_matrix:
        """Strictly lower-triangular coefficient matrix."""
        rs = self.refset
        return _sparse_rows(rs.nbr, rs.counts, self.coeffs, rs.r)

    def residuals(self, z) -> np.ndarray:
        """``(z - mu) - B (z - mu)`` for one vector or a (R, r) batch."""
        zc = np.asarray(z, dtype=np.float64) - self.model.mean
        B = self.B()
        return zc - (B @ zc.T).T if zc.ndim == 2 else zc - B @ zc

    def rescaled(self, model: CovarianceModel) -> "SparseFactor":
        """Same factor under a model differing only in mean and variance."""
        if model.family != self.model.family:
            raise ValueError("only mean and variance may change")
        c = model.variance / self.model.variance
        return SparseFactor(model, self.refset, self.coeffs, self.condvar * c)


def build_reference_factor(model: CovarianceModel, refset: ReferenceSet) -> SparseFactor:
    pts = model.check_locations(refset.locs)
    coeffs, condvar = _vecchia(model, pts, pts, refset.nbr, refset.counts, "reference node")
    return SparseFactor(model, refset, coeffs, condvar)


def reference_logdensity(factor: SparseFactor, z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (factor.r,):
        raise ValueError(f"expected {factor.r} reference values")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    e = factor.residuals(z)
    var = factor.sd ** 2
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + e * e / var))


def sample_reference(factor: SparseFactor, W) -> np.ndarray:
    """Ancestral draw from standard-normal innovations ``W`` (r,) or (R, r)."""
    W = np.asarray(W, dtype=np.float64)
    batch = np.ascontiguousarray(np.atleast_2d(W))
    rs = factor.refset
    Z = kernels.ancestral_sample(rs.nbr, rs.counts, factor.coeffs, factor.sd,
                                 float(factor.model.mean), batch)
    return Z if W.ndim == 2 else Z[0]


def simulate_reference(factor: SparseFactor, rng) -> np.ndarray:
    return sample_reference(factor, as_stream(rng).normals(factor.r))


@dataclass(frozen=True)
class TargetConditionals:
    """Independent per-target conditionals given the reference values.

    Row ``i`` describes target ``i``: neighbours ``nbr[i, :counts[i]]`` in the
    reference set, coefficients, and conditional variance.  There are no
    cross-target terms.
    """

    model: CovarianceModel
    targets: np.ndarray
    nbr: np.ndarray
    counts: np.ndarray
    coeffs: np.ndarray
    condvar: np.ndarray
    r: int

    def __len__(self):
        return self.targets.shape[0]

    @property
    def sd(self) -> np.ndarray:
        return _sd(self.condvar, self.model.variance)

    def A(self) -> sparse.csr_matrix:
        return _sparse_rows(self.nbr, self.counts, self.coeffs, self.r)

    def mean_given(self, z_ref) -> np.ndarray:
        zc = np.asarray(z_ref, dtype=np.float64) - self.model.mean
        A = self.A()
        m = (A @ zc.T).T if zc.ndim == 2 else A @ zc
        return self.model.mean + m

    def subset(self, idx) -> "TargetConditionals":
        idx = np.asarray(idx)
        return TargetConditionals(self.model, self.targets[idx], self.nbr[idx], self.counts[idx],
                                  self.coeffs[idx], self.condvar[idx], self.r)


def reject_reference_hits(targets: np.ndarray, ref_locs: np.ndarray):
    d, _ = cKDTree(ref_locs).query(targets, k=1)
    hit = np.flatnonzero(d == 0)
    if hit.size:
        raise ValueError(f"target {int(hit[0])} coincides with a reference location")


def target_conditionals(model: CovarianceModel, refset: ReferenceSet, targets,
                        rule: NeighborRule | None = None) -> TargetConditionals:
    """Conditionals of off-reference targets; ``rule`` defaults to the reference rule."""
    rule = refset.rule if rule is None else rule
    T = model.check_locations(targets)
    S = refset.locs
    reject_reference_hits(T, S)
    n, r = T.shape[0], S.shape[0]
    if isinstance(rule, NearestM):
        k = min(rule.m, r)
        nbr = np.full((n, max(k, 1)), -1, dtype=np.int64)
        if k:
            nbr[:, :k] = knn_indices(T, S, k)
        counts = np.full(n, k, dtype=np.int64)
    elif isinstance(rule, Radius):
        nbr, counts = _pad(radius_indices(T, S, rule.R), n)
    elif isinstance(rule, Full):
        nbr = np.ascontiguousarray(np.broadcast_to(np.arange(r), (n, r)))
        counts = np.full(n, r, dtype=np.int64)
    else:
        raise TypeError(f"unknown neighbour rule {rule!r}")
    coeffs, condvar = _vecchia(model, T, S, nbr, counts, "target")
    return TargetConditionals(model, T, nbr, counts, coeffs, condvar, r)


def target_ids(n: int, ids=None) -> np.ndarray:
    if ids is None:
        return np.arange(n)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ValueError("need one id per target")
    return ids


def simulate_targets(conds: TargetConditionals, z_ref, rng, ids=None) -> np.ndarray:
    """Independent normal draws per target.

    The innovation of a target is the stream draw addressed by its id
    (default: its position), so reordering targets together with their ids
    leaves every value unchanged.
    """
    z_ref = np.asarray(z_ref, dtype=np.float64)
    if z_ref.shape != (conds.r,):
        raise ValueError(f"expected {conds.r} reference values")
    w = as_stream(rng).normals_at(target_ids(len(conds), ids))
    return conds.mean_given(z_ref) + conds.sd * w


def reference_covariance(factor: SparseFactor) -> np.ndarray:
    """Exact covariance of the reference values, ``(I-B)^{-1} F (I-B)^{-T}``."""
    r = factor.r
    if r * r > IMPLIED_CAP:
        raise ValueError("reference set too large for a dense implied covariance")
    IB = np.eye(r) - factor.B().toarray()
    U = linalg.solve_triangular(IB, np.diag(factor.sd), lower=True, unit_diagonal=True,
                                check_finite=False)
    return U @ U.T


def implied_covariance_nngp(factor: SparseFactor, conds: TargetConditionals | None = None,
                            which: str = "targets") -> np.ndarray:
    """Exact finite-dimensional covariance under the sparse construction.

    ``which`` selects ``"reference"``, ``"targets"`` or ``"joint"`` (reference
    block first, then targets).
    """
    cov_s = reference_covariance(factor)
    if which == "reference" or conds is None:
        return cov_s
    n = len(conds)
    if n * max(n, factor.r) > IMPLIED_CAP:
        raise ValueError("target set too large for a dense implied covariance")
    A = conds.A().toarray()
    AC = A @ cov_s
    cov_t = AC @ A.T
    cov_t[np.diag_indices(n)] += conds.sd ** 2
    if which == "targets":
        return cov_t
    if which == "joint":
        return np.block([[cov_s, AC.T], [AC, cov_t]])
    raise ValueError(f"unknown selection {which!r}")
