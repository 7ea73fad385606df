"""Covariance families, dense Gaussian algebra and exact Gaussian conditioning."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from ._backend import kernels
from .geometry import as_points
from .rng import as_stream

LOG_2PI = float(np.log(2.0 * np.pi))
JITTER = 1e-10


class SingularCovarianceError(np.linalg.LinAlgError):
    """Cholesky failed even after the single jitter retry."""


@dataclass(frozen=True)
class PoweredExponential:
    """Isotropic correlation ``exp(-(d/phi)**nu)`` with ``0 < nu <= 2``.

    ``nu = 2`` is the Gaussian kernel; it is allowed but notoriously
    ill-conditioned on dense location sets.
    """

    phi: float
    nu: float

    code = 0

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if not 0 < self.nu <= 2:
            raise ValueError("nu must lie in (0, 2]")

    @classmethod
    def from_phi_nu(cls, phi_nu: float, nu: float) -> "PoweredExponential":
        """Build from the product parameter ``phi**nu`` (e.g. ``phi**nu = 4``)."""
        if not phi_nu > 0:
            raise ValueError("phi**nu must be positive")
        return cls(float(phi_nu) ** (1.0 / nu), nu)

    def correlation(self, d):
        return np.exp(-((np.asarray(d, dtype=np.float64) / self.phi) ** self.nu))


@dataclass(frozen=True)
class BrownianBridge:
    """Kernel ``min(s, t) - s t`` on ``[0, 1]`` (scaled by the model variance)."""

    code = 1
    phi = 1.0
    nu = 1.0


@dataclass(frozen=True)
class CovarianceModel:
    mean: float = 0.0
    variance: float = 1.0
    family: PoweredExponential | BrownianBridge = field(
        default_factory=lambda: PoweredExponential.from_phi_nu(4.0, 1.9))

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if not np.isfinite(self.mean):
            raise ValueError("mean must be finite")

    @classmethod
    def brownian_bridge(cls, variance: float = 1.0) -> "CovarianceModel":
        return cls(0.0, variance, BrownianBridge())

    @property
    def is_bridge(self) -> bool:
        return isinstance(self.family, BrownianBridge)

    def scaled(self, factor: float) -> "CovarianceModel":
        return replace(self, variance=self.variance * factor)

    def with_params(self, mean: float | None = None, variance: float | None = None):
        return replace(self, mean=self.mean if mean is None else mean,
                       variance=self.variance if variance is None else variance)

    def kernel_args(self) -> tuple:
        fam = self.family
        return (fam.code, float(self.variance), float(fam.phi), float(fam.nu))

    def check_locations(self, pts) -> np.ndarray:
        pts = as_points(pts, 1 if self.is_bridge else None)
        if self.is_bridge and (pts.shape[1] != 1 or np.any(pts < 0) or np.any(pts > 1)):
            raise ValueError("the Brownian-bridge kernel needs 1-D locations in [0, 1]")
        return pts


def covariance(model: CovarianceModel, u, v) -> float:
    u = model.check_locations(u)
    v = model.check_locations(v)
    return float(cross_cov(model, u, v)[0, 0])


def cross_cov(model: CovarianceModel, X, Y) -> np.ndarray:
    X = model.check_locations(X)
    Y = model.check_locations(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("location dimensions differ")
    return kernels.cov_cross(X, Y, *model.kernel_args())


def _assert_distinct(pts: np.ndarray, what: str = "locations"):
    if pts.shape[0] > 1 and np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise ValueError(f"duplicate {what}")


def cov_matrix(model: CovarianceModel, locs) -> np.ndarray:
    pts = model.check_locations(locs)
    _assert_distinct(pts)
    C = cross_cov(model, pts, pts)
    return 0.5 * (C + C.T)


def cholesky(C: np.ndarray, scale: float = 1.0, label: str = "") -> np.ndarray:
    """Lower Cholesky factor with one retry at ``JITTER * scale`` on the diagonal."""
    try:
        return linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    try:
        return linalg.cholesky(C + JITTER * scale * np.eye(C.shape[0]), lower=True,
                               check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance not positive definite after jitter{': ' + label if label else ''}"
        ) from exc


@dataclass(frozen=True)
class GaussianConditional:
    """Law of ``Z_T | Z_N = z_N``: mean ``offset + coeffs @ z_N``, covariance ``cov``.

    ``cov`` is computed as ``C_TT - V.T V`` with ``V = L_N^{-1} C_NT``, so every
    entry depends only on its own pair of targets.
    """

    coeffs: np.ndarray
    offset: np.ndarray
    cov: np.ndarray
    _chol: list = field(default_factory=list, repr=False, compare=False)

    def mean(self, z_cond) -> np.ndarray:
        z_cond = np.asarray(z_cond, dtype=np.float64)
        return self.offset + z_cond @ self.coeffs.T

    @property
    def chol(self) -> np.ndarray:
        """Lower factor of ``cov`` (jitter policy applies), computed once."""
        if not self._chol:
            scale = float(np.max(np.diag(self.cov), initial=0.0)) or 1.0
            self._chol.append(cholesky(self.cov, scale, "conditional covariance"))
        return self._chol[0]


def condition(model: CovarianceModel, targets, cond_locs) -> GaussianConditional:
    """Exact parent-GP conditional of ``targets`` given values at ``cond_locs``."""
    T = model.check_locations(targets)
    _assert_distinct(T, "target locations")
    C_TT = cross_cov(model, T, T)
    C_TT = 0.5 * (C_TT + C_TT.T)
    N = np.empty((0, T.shape[1])) if np.size(cond_locs) == 0 else model.check_locations(cond_locs)
    if N.shape[0] == 0:
        return GaussianConditional(np.zeros((T.shape[0], 0)), np.full(T.shape[0], model.mean), C_TT)
    _assert_distinct(N, "conditioning locations")
    if np.unique(np.vstack([T, N]), axis=0).shape[0] != T.shape[0] + N.shape[0]:
        raise ValueError("targets and conditioning locations must be disjoint")
    L = cholesky(cov_matrix(model, N), model.variance,
                 f"conditioning set of {N.shape[0]} locations")
    V = linalg.solve_triangular(L, cross_cov(model, N, T), lower=True, check_finite=False)
    A = linalg.solve_triangular(L, V, lower=True, trans="T", check_finite=False).T
    cov = C_TT - V.T @ V
    offset = model.mean * (1.0 - A.sum(axis=1))
    return GaussianConditional(A, offset, 0.5 * (cov + cov.T))


def mvn_logdensity(mean, cov_factor, x) -> float:
    """Log-density of N(mean, L L^T) at ``x`` given the lower factor ``L``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    L = np.atleast_2d(np.asarray(cov_factor, dtype=np.float64))
    if not (mean.shape == x.shape and L.shape == (x.size, x.size)):
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mean)) and np.all(np.isfinite(L))):
        raise ValueError("non-finite input")
    w = linalg.solve_triangular(L, x - mean, lower=True, check_finite=False)
    return float(-0.5 * x.size * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * w @ w)


def mvn_sample(mean, cov_factor, rng) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    L = np.atleast_2d(np.asarray(cov_factor, dtype=np.float64))
    w = as_stream(rng).normals(mean.size)
    return mean + L @ w
