"""Piecewise continuous GP (PCGP) and its shifted-partition mixture (mPCGP).

The reference values come from a sparse factor exactly as for an NNGP.  The
domain is cut into congruent cells; within each cell the field follows the
parent GP conditioned on the reference locations nearest the cell centroid,
and different cells are conditionally independent given the reference values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .covariance import cholesky, condition
from .geometry import Domain, GeometryError, Partition, knn_indices, locate_cells, make_partition
from .rng import as_stream
from .sparse_process import (NearestM, SparseFactor, reference_covariance, reject_reference_hits,
                             target_ids)

CELL_CAP = 2000


def region_neighbor_sets(partition: Partition, ref_locs, m_region: int) -> np.ndarray:
    """(K, min(m_region, r)) indices of the references nearest each cell centroid."""
    if int(m_region) < 1:
        raise ValueError("m_region must be >= 1")
    S = np.asarray(ref_locs, dtype=np.float64)
    return knn_indices(partition.centroids, S, min(int(m_region), S.shape[0]))


def default_m_region(factor: SparseFactor) -> int:
    rule = factor.refset.rule
    return rule.m if isinstance(rule, NearestM) and rule.m > 0 else factor.r


@dataclass(frozen=True)
class PcgpModel:
    """Reference factor, partition and per-cell conditioning sets."""

    factor: SparseFactor
    partition: Partition
    m_region: int
    region_nbrs: np.ndarray
    cell_cap: int = CELL_CAP
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def model(self):
        return self.factor.model

    @property
    def r(self) -> int:
        return self.factor.r

    def blocks(self, targets, scale: float = 1.0) -> "BlockSet":
        """Block conditionals for ``targets``, cached by geometry."""
        T = np.ascontiguousarray(targets, dtype=np.float64)
        key = (T.shape, T.tobytes(), float(scale))
        hit = self._cache.get(key)
        if hit is None:
            hit = build_block_conditionals(self, T, scale)
            self._cache.clear()
            self._cache[key] = hit
        return hit


def make_pcgp(factor: SparseFactor, partition: Partition, m_region: int | None = None,
              cell_cap: int = CELL_CAP) -> PcgpModel:
    if partition.domain.dim != factor.refset.locs.shape[1]:
        raise ValueError("partition and reference set dimensions differ")
    mr = default_m_region(factor) if m_region is None else int(m_region)
    nbrs = region_neighbor_sets(partition, factor.refset.locs, mr)
    return PcgpModel(factor, partition, mr, nbrs, cell_cap)


@dataclass(frozen=True)
class BlockConditional:
    """Conditional law of one cell's targets given its reference neighbours.

    ``chol`` already includes any component scaling, so a draw is
    ``offset + coeffs @ z[nbrs] + chol @ w``.
    """

    cell: int
    members: np.ndarray
    nbrs: np.ndarray
    coeffs: np.ndarray
    offset: np.ndarray
    cov: np.ndarray
    chol: np.ndarray


@dataclass(frozen=True)
class BlockSet:
    targets: np.ndarray
    cells: np.ndarray
    blocks: tuple
    r: int
    scale: float

    def __len__(self):
        return self.targets.shape[0]

    def A(self) -> sparse.csr_matrix:
        """Sparse (n, r) matrix of conditional-mean coefficients."""
        rows, cols, vals = [], [], []
        for b in self.blocks:
            rows.append(np.repeat(b.members, b.nbrs.size))
            cols.append(np.tile(b.nbrs, b.members.size))
            vals.append(b.coeffs.ravel())
        n = len(self)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(n, self.r))

    def offsets(self) -> np.ndarray:
        out = np.empty(len(self))
        for b in self.blocks:
            out[b.members] = b.offset
        return out

    def block_cov(self) -> np.ndarray:
        """Dense block-diagonal conditional covariance (scaled) in target order."""
        n = len(self)
        D = np.zeros((n, n))
        for b in self.blocks:
            D[np.ix_(b.members, b.members)] = self.scale * b.cov
        return D


def build_block_conditionals(model: PcgpModel, targets, scale: float = 1.0) -> BlockSet:
    """One conditional per nonempty cell; ``scale`` multiplies the conditional covariance."""
    cov_model = model.model
    T = cov_model.check_locations(targets)
    S = model.factor.refset.locs
    reject_reference_hits(T, S)
    cells = locate_cells(model.partition, T)
    order = np.argsort(cells, kind="stable")
    bounds = np.flatnonzero(np.diff(cells[order])) + 1
    blocks = []
    root = np.sqrt(scale)
    for members in np.split(order, bounds):
        if members.size == 0:
            continue
        k = int(cells[members[0]])
        if members.size > model.cell_cap:
            raise GeometryError(
                f"cell {k} holds {members.size} targets (cap {model.cell_cap}); use a finer partition")
        nb = model.region_nbrs[k]
        gc = condition(cov_model, T[members], S[nb])
        L = cholesky(gc.cov, cov_model.variance, f"cell {k}")
        blocks.append(BlockConditional(k, members, nb, gc.coeffs, gc.offset, gc.cov, root * L))
    return BlockSet(T, cells, tuple(blocks), model.r, float(scale))


def sample_blocks(bs: BlockSet, Z, W) -> np.ndarray:
    """Field values from reference draws ``Z`` (R, r) and innovations ``W`` (R, n)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    out = np.empty((Z.shape[0], len(bs)))
    for b in bs.blocks:
        out[:, b.members] = b.offset + Z[:, b.nbrs] @ b.coeffs.T + W[:, b.members] @ b.chol.T
    return out


def simulate_pcgp(model: PcgpModel, targets, z_ref, rng, ids=None) -> np.ndarray:
    """One PCGP draw at ``targets`` given the reference values.

    Target innovations are addressed by stable ids (default: positions), so
    the draw does not depend on how targets are ordered or grouped.
    """
    z_ref = np.asarray(z_ref, dtype=np.float64)
    if z_ref.shape != (model.r,):
        raise ValueError(f"expected {model.r} reference values")
    targets, ids, inv = _canonical(targets, ids)
    bs = model.blocks(targets)
    w = as_stream(rng).normals_at(ids)
    return sample_blocks(bs, z_ref, w)[0][inv]


def _canonical(targets, ids):
    """Targets sorted by id, so block Cholesky factors see one member order."""
    targets = np.asarray(targets, dtype=np.float64)
    ids = target_ids(targets.shape[0] if targets.ndim > 1 else 1, ids)
    order = np.argsort(ids, kind="stable")
    return targets[order] if targets.ndim > 1 else targets, ids[order], np.argsort(order)


def implied_covariance_pcgp(model: PcgpModel, targets, scale: float = 1.0) -> np.ndarray:
    """Exact covariance ``A Cov(Z_S) A^T + blockdiag(conditional covariances)``."""
    bs = build_block_conditionals(model, targets, scale)
    A = bs.A().toarray()
    cov = A @ reference_covariance(model.factor) @ A.T + bs.block_cov()
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# mixture over shifted partitions

def make_shifted_partitions(domain: Domain, counts, G: int) -> list[Partition]:
    """``G`` copies of the regular partition shifted by half a cell.

    G=1 is the base partition, G=2 adds the diagonal half-cell shift and G=4
    (2-D only) uses the shifts (0,0), (h/2,0), (0,h/2), (h/2,h/2).
    """
    d = domain.dim
    allowed = {1: (1, 2), 2: (1, 2, 4)}.get(d, (1,))
    if G not in allowed:
        raise ValueError(f"G={G} is not supported for d={d}")
    base = make_partition(domain, counts)
    h = base.side
    if G == 1:
        shifts = [np.zeros(d)]
    elif G == 2:
        shifts = [np.zeros(d), h / 2]
    else:
        shifts = [np.zeros(2), np.array([h[0] / 2, 0.0]), np.array([0.0, h[1] / 2]), h / 2]
    return [base if not s.any() else make_partition(domain, counts, s) for s in shifts]


@dataclass(frozen=True)
class MpcgpModel:
    """``G`` PCGP components on shifted partitions sharing one reference factor."""

    components: tuple

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def factor(self) -> SparseFactor:
        return self.components[0].factor

    @property
    def r(self) -> int:
        return self.factor.r

    def blocks(self, targets) -> list[BlockSet]:
        return [c.blocks(targets, scale=float(self.G)) for c in self.components]


def make_mpcgp(factor: SparseFactor, domain: Domain, counts, G: int, m_region: int | None = None,
               cell_cap: int = CELL_CAP) -> MpcgpModel:
    parts = make_shifted_partitions(domain, counts, G)
    return MpcgpModel(tuple(make_pcgp(factor, p, m_region, cell_cap) for p in parts))


def component_stream(rng, j: int):
    """Stream of component ``j``; component 0 uses the plain PCGP stream."""
    s = as_stream(rng)
    return s if j == 0 else s.child("component", j)


def sample_mpcgp(bsets, Z, Ws) -> np.ndarray:
    """Average of the components, each with conditional covariance scaled by G."""
    out = sample_blocks(bsets[0], Z, Ws[0])
    for bs, W in zip(bsets[1:], Ws[1:]):
        out += sample_blocks(bs, Z, W)
    return out / len(bsets)


def simulate_mpcgp(model: MpcgpModel, targets, z_ref, rng, ids=None) -> np.ndarray:
    z_ref = np.asarray(z_ref, dtype=np.float64)
    if z_ref.shape != (model.r,):
        raise ValueError(f"expected {model.r} reference values")
    targets, ids, inv = _canonical(targets, ids)
    bsets = model.blocks(targets)
    Ws = [component_stream(rng, j).normals_at(ids) for j in range(model.G)]
    return sample_mpcgp(bsets, z_ref, Ws)[0][inv]


def implied_covariance_mpcgp(model: MpcgpModel, targets) -> np.ndarray:
    """``Abar Cov(Z_S) Abar^T + (1/G^2) sum_j G D_j`` with ``Abar`` the mean coefficient matrix."""
    bsets = [build_block_conditionals(c, targets, float(model.G)) for c in model.components]
    Abar = sum(bs.A().toarray() for bs in bsets) / model.G
    D = sum(bs.block_cov() for bs in bsets) / model.G ** 2
    cov = Abar @ reference_covariance(model.factor) @ Abar.T + D
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# boundary smoothness

def adjacent_pairs(counts) -> np.ndarray:
    """Index pairs of axis-adjacent points of a lattice built by ``regular_grid``."""
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    idx = np.arange(int(np.prod(counts))).reshape(counts)
    pairs = []
    for a in range(len(counts)):
        lo = np.take(idx, np.arange(counts[a] - 1), axis=a).ravel()
        hi = np.take(idx, np.arange(1, counts[a]), axis=a).ravel()
        pairs.append(np.stack([lo, hi], axis=1))
    return np.concatenate(pairs)


def straddling_pairs(points, counts, partition: Partition) -> np.ndarray:
    """Adjacent grid pairs lying in different cells of ``partition``."""
    pairs = adjacent_pairs(counts)
    cells = locate_cells(partition, points)
    return pairs[cells[pairs[:, 0]] != cells[pairs[:, 1]]]


def edge_discontinuity(values, pairs) -> np.ndarray:
    """Mean ``|Z_a - Z_b|`` over ``pairs``; one number per row of a (R, n) batch."""
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if len(pairs) == 0:
        raise ValueError("no pairs straddle a cell edge")
    return np.abs(v[:, pairs[:, 0]] - v[:, pairs[:, 1]]).mean(axis=1)
