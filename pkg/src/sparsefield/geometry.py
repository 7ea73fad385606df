"""Box domains, regular and nested grids, partitions and exact neighbour search.

Neighbour searches return indices ordered by ``(distance, index)``; ties are
always broken towards the smaller index.  Candidate sets above
:data:`BRUTE_FORCE_LIMIT` points go through a k-d tree, but only to propose
candidates: the final selection always uses the same squared-distance
expression as the brute-force path, so both routes return identical results.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .rng import as_stream

BRUTE_FORCE_LIMIT = 512
GRID_CAP = 20_000_000


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise GeometryError("lower and upper must have the same positive length")
        if not all(np.isfinite(lo + hi)):
            raise GeometryError("domain bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise GeometryError("need lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def square(cls, side: float, d: int = 2) -> "Domain":
        return cls((0.0,) * d, (float(side),) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum(self.span ** 2)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, pts) -> np.ndarray:
        pts = as_points(pts, self.dim)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


def volume(domain: Domain) -> float:
    return float(np.prod(domain.span))


def as_points(x, d: int | None = None) -> np.ndarray:
    """Coerce a location or list of locations to a C-contiguous (n, d) float array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1) if d == 1 else a.reshape(1, -1)
    if a.ndim != 2:
        raise GeometryError("locations must be a vector or an (n, d) array")
    if d is not None and a.shape[1] != d:
        raise GeometryError(f"expected {d}-dimensional locations, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise GeometryError("locations must be finite")
    return np.ascontiguousarray(a)


def _lattice(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.ascontiguousarray(np.stack([m.ravel() for m in mesh], axis=1))


def _check_counts(counts, d: int, cap: int) -> tuple:
    counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(counts), (d,)))
    if any(c < 1 for c in counts):
        raise GeometryError("per-axis counts must be >= 1")
    total = int(np.prod([float(c) for c in counts]))
    if total > cap:
        raise GeometryError(f"grid of {total} points exceeds the cap of {cap}")
    return counts


def regular_grid(domain: Domain, counts, style: str = "cell", cap: int = GRID_CAP) -> np.ndarray:
    """Regular lattice with ``prod(counts)`` points, axis 0 varying slowest.

    ``style="cell"`` puts points at cell midpoints; ``style="endpoint"`` spaces
    them evenly including both domain faces (a count of 1 gives the lower face).
    """
    counts = _check_counts(counts, domain.dim, cap)
    axes = []
    for lo, hi, c in zip(domain.lower, domain.upper, counts):
        if style == "cell":
            axes.append(lo + (np.arange(c) + 0.5) * ((hi - lo) / c))
        elif style == "endpoint":
            axes.append(np.array([lo]) if c == 1 else lo + (np.arange(c) * (hi - lo)) / (c - 1))
        else:
            raise GeometryError(f"unknown grid style {style!r}")
    return _lattice(axes)


@dataclass(frozen=True)
class GridSchedule:
    """Nested endpoint-inclusive dyadic grids.

    Level ``n`` has ``base * 2**n`` intervals per axis.  Coordinates are
    computed as ``lower + (i * span) / N`` from integer lattice indices, which
    makes every level's points bit-identical to their copies on finer levels.
    """

    domain: Domain
    base: tuple
    level: int = 0

    def __post_init__(self):
        base = tuple(int(b) for b in np.broadcast_to(np.atleast_1d(self.base), (self.domain.dim,)))
        if any(b < 1 for b in base):
            raise GeometryError("base interval counts must be >= 1")
        if self.level < 0:
            raise GeometryError("level must be >= 0")
        object.__setattr__(self, "base", base)

    @property
    def intervals(self) -> tuple:
        return tuple(b << self.level for b in self.base)

    @property
    def size(self) -> int:
        return int(np.prod([n + 1 for n in self.intervals]))

    def lattice(self) -> np.ndarray:
        """Integer lattice indices (size, d) in the grid's point order."""
        return _lattice([np.arange(n + 1) for n in self.intervals])

    def points(self, cap: int = GRID_CAP) -> np.ndarray:
        if self.size > cap:
            raise GeometryError(f"grid of {self.size} points exceeds the cap of {cap}")
        axes = [lo + (np.arange(n + 1) * (hi - lo)) / n
                for lo, hi, n in zip(self.domain.lower, self.domain.upper, self.intervals)]
        return _lattice(axes)

    def refine(self, cap: int = GRID_CAP) -> "GridSchedule":
        nxt = GridSchedule(self.domain, self.base, self.level + 1)
        if nxt.size > cap:
            raise GeometryError(f"grid of {nxt.size} points exceeds the cap of {cap}")
        return nxt

    def index_in(self, finer: "GridSchedule") -> np.ndarray:
        """Positions of this level's points inside the point array of ``finer``."""
        if finer.base != self.base or finer.level < self.level:
            raise GeometryError("target schedule must be a refinement of this one")
        lat = self.lattice() << (finer.level - self.level)
        dims = [n + 1 for n in finer.intervals]
        return np.ravel_multi_index(tuple(lat.T), dims)


def uniform_locations(domain: Domain, r: int, rng) -> np.ndarray:
    """``r`` i.i.d. uniform locations in the domain."""
    if int(r) < 1:
        raise GeometryError("r must be >= 1")
    u = as_stream(rng).uniforms((int(r), domain.dim))
    return np.ascontiguousarray(domain.lo + u * domain.span)


# --------------------------------------------------------------------------
# neighbour search

def _d2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distance between broadcastable coordinate arrays (last axis = d).

    The one distance expression used by every selection path.
    """
    diff = a - b
    s = diff[..., 0] * diff[..., 0]
    for k in range(1, diff.shape[-1]):
        s = s + diff[..., k] * diff[..., k]
    return s


def _sqdist(q: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Squared distances from each row of ``q`` (n, d) to each row of ``pts``."""
    return _d2(q[:, None, :], pts[None, :, :])


def _select_rows(q: np.ndarray, cand_idx: np.ndarray, cands: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k by (squared distance, index) among per-row candidate lists."""
    d2 = _d2(q[:, None, :], cands[cand_idx])
    order = np.lexsort((cand_idx, d2), axis=-1)[:, :k]
    return np.take_along_axis(cand_idx, order, axis=1)


def _brute_knn(q: np.ndarray, cands: np.ndarray, k: int, limit: int | None = None) -> np.ndarray:
    n = q.shape[0]
    c = cands.shape[0] if limit is None else limit
    out = np.empty((n, k), dtype=np.int64)
    step = max(1, 2_000_000 // max(c, 1))
    for lo in range(0, n, step):
        d2 = _sqdist(q[lo:lo + step], cands[:c])
        # stable sort keeps lower index first among equal distances
        out[lo:lo + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_indices(queries, candidates, m: int) -> np.ndarray:
    """Indices of the ``min(m, |candidates|)`` nearest candidates for each query.

    Returns an (n, k) int64 array, each row ordered by ``(distance, index)``.
    """
    cands = as_points(candidates)
    q = as_points(queries, cands.shape[1])
    c = cands.shape[0]
    if c == 0:
        raise GeometryError("candidate set is empty")
    k = min(int(m), c)
    if k <= 0:
        return np.empty((q.shape[0], 0), dtype=np.int64)
    if c <= BRUTE_FORCE_LIMIT or k == c:
        return _brute_knn(q, cands, k)
    tree = cKDTree(cands)
    out = np.empty((q.shape[0], k), dtype=np.int64)
    todo = np.arange(q.shape[0])
    kk = min(c, k + max(8, k))
    while todo.size:
        dd, ii = tree.query(q[todo], k=kk)
        dd = dd.reshape(todo.size, kk)
        ii = ii.reshape(todo.size, kk).astype(np.int64)
        if kk == c:
            out[todo] = _select_rows(q[todo], ii, cands, k)
            break
        sel = _select_rows(q[todo], ii, cands, k)
        kth = np.sqrt(_d2(q[todo], cands[sel[:, -1]]))
        # anything the tree did not return is at least dd[:, -1] away
        safe = kth < dd[:, -1] * (1.0 - 1e-9)
        out[todo[safe]] = sel[safe]
        todo = todo[~safe]
        kk = min(c, 2 * kk)
    return out


def nearest_neighbors(query, candidates, m: int) -> list[int]:
    """Indices of the ``m`` nearest candidates to one query, ties to the lower index."""
    cands = as_points(candidates, None if np.ndim(candidates) > 1 else 1)
    q = as_points(query, cands.shape[1])
    return knn_indices(q, cands, m)[0].tolist()


def radius_indices(queries, candidates, R: float) -> list[np.ndarray]:
    """For each query, sorted indices of candidates strictly closer than ``R``."""
    if not R > 0:
        raise GeometryError("radius must be positive")
    cands = as_points(candidates)
    q = as_points(queries, cands.shape[1])
    R2 = float(R) * float(R)
    if cands.shape[0] <= BRUTE_FORCE_LIMIT:
        d2 = _sqdist(q, cands)
        return [np.flatnonzero(row < R2) for row in d2]
    tree = cKDTree(cands)
    hits = tree.query_ball_point(q, r=float(R) * (1.0 + 1e-9))
    out = []
    for qi, h in zip(q, hits):
        h = np.sort(np.asarray(h, dtype=np.int64))
        if h.size:
            d2 = _d2(cands[h], qi)
            h = h[d2 < R2]
        out.append(h)
    return out


def radius_neighbors(query, candidates, R: float) -> list[int]:
    cands = as_points(candidates, None if np.ndim(candidates) > 1 else 1)
    q = as_points(query, cands.shape[1])
    return radius_indices(q, cands, R)[0].tolist()


def predecessor_knn(locs, m: int) -> tuple[np.ndarray, np.ndarray]:
    """For each ordered location i, its ``min(m, i)`` nearest among locations ``< i``.

    Returns a padded (r, m) index array (``-1`` fill) and per-row counts.
    """
    pts = as_points(locs)
    r = pts.shape[0]
    m = int(m)
    nbr = np.full((r, max(m, 0)), -1, dtype=np.int64)
    counts = np.minimum(np.arange(r), max(m, 0)).astype(np.int64)
    if m <= 0 or r <= 1:
        return nbr, counts
    # early rows: the predecessor set itself is small
    head = min(r, max(BRUTE_FORCE_LIMIT, 4 * m))
    for i in range(1, head):
        k = min(m, i)
        d2 = _sqdist(pts[i:i + 1], pts[:i])[0]
        nbr[i, :k] = np.argsort(d2, kind="stable")[:k]
    if head >= r:
        return nbr, counts
    tree = cKDTree(pts)
    todo = np.arange(head, r)
    kk = min(r, 2 * m + 8)
    while todo.size:
        dd, ii = tree.query(pts[todo], k=kk)
        dd = dd.reshape(todo.size, kk)
        ii = ii.reshape(todo.size, kk).astype(np.int64)
        done = np.zeros(todo.size, dtype=bool)
        for row, i in enumerate(todo):
            prev = ii[row][ii[row] < i]
            if kk < r and prev.size < m:
                continue
            d2 = _d2(pts[i], pts[prev])
            order = np.lexsort((prev, d2))[:m]
            if kk < r and not np.sqrt(d2[order[-1]]) < dd[row, -1] * (1.0 - 1e-9):
                continue
            nbr[i, :m] = prev[order]
            done[row] = True
        todo = todo[~done]
        if kk == r:
            break
        kk = min(r, 2 * kk)
    return nbr, counts


def predecessor_radius(locs, R: float) -> list[np.ndarray]:
    """For each ordered location i, sorted predecessors strictly within ``R``."""
    pts = as_points(locs)
    hits = radius_indices(pts, pts, R)
    return [h[h < i] for i, h in enumerate(hits)]


# --------------------------------------------------------------------------
# partitions

@dataclass(frozen=True)
class Partition:
    """Half-open box cells covering a domain, optionally shifted by ``offset``.

    Cells are ``[a, b)`` on every axis except those touching the upper face,
    which are closed above.  A nonzero offset component adds one clipped cell
    on that axis.
    """

    domain: Domain
    base_counts: tuple
    offset: tuple
    edges: tuple = field(repr=False)

    @property
    def counts(self) -> tuple:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def K(self) -> int:
        return int(np.prod(self.counts))

    @property
    def side(self) -> np.ndarray:
        return self.domain.span / np.array(self.base_counts)

    @property
    def centroids(self) -> np.ndarray:
        mids = [0.5 * (e[:-1] + e[1:]) for e in self.edges]
        return _lattice(mids)

    def cell_bounds(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.unravel_index(int(k), self.counts)
        lo = np.array([e[i] for e, i in zip(self.edges, idx)])
        hi = np.array([e[i + 1] for e, i in zip(self.edges, idx)])
        return lo, hi


def make_partition(domain: Domain, counts, offset=None) -> Partition:
    """Regular partition into ``prod(counts)`` congruent boxes, shifted by ``offset``."""
    counts = _check_counts(counts, domain.dim, GRID_CAP)
    off = np.zeros(domain.dim) if offset is None else np.broadcast_to(
        np.asarray(offset, dtype=np.float64), (domain.dim,))
    edges = []
    for lo, hi, c, o in zip(domain.lower, domain.upper, counts, off):
        h = (hi - lo) / c
        if not abs(o) < h:
            raise GeometryError("each offset component must be smaller than the cell side")
        if o == 0:
            e = lo + (np.arange(c + 1) * (hi - lo)) / c
            e[-1] = hi
        else:
            o = o % h  # a negative shift is the same partition as h + shift
            inner = lo + o + np.arange(c) * h
            e = np.concatenate([[lo], inner[(inner > lo) & (inner < hi)], [hi]])
        edges.append(e)
    return Partition(domain, counts, tuple(float(v) for v in off), tuple(edges))


def locate_cells(partition: Partition, pts) -> np.ndarray:
    """Cell index of every point under the half-open rule."""
    dom = partition.domain
    pts = as_points(pts, dom.dim)
    if not np.all(dom.contains(pts)):
        raise GeometryError("point outside the domain")
    per_axis = []
    for a, e in enumerate(partition.edges):
        j = np.searchsorted(e, pts[:, a], side="right") - 1
        per_axis.append(np.clip(j, 0, len(e) - 2))
    return np.ravel_multi_index(tuple(per_axis), partition.counts).astype(np.int64)


def locate_cell(partition: Partition, u) -> int:
    return int(locate_cells(partition, as_points(u, partition.domain.dim))[0])
