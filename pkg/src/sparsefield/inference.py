"""Gaussian log-likelihoods and profile maximum likelihood for (mu, sigma^2).

Correlation parameters stay fixed.  Each model supplies a *structure* for its
unit-variance correlation matrix ``Omega`` exposing ``gram(X) = X^T Omega^{-1} X``
and ``logdet = log|Omega|``; the profile estimates are then closed-form GLS.

* NNGP: ``Omega^{-1} = (I - B)^T F^{-1} (I - B)`` is sparse.
* PCGP: ``Omega = D + A Cov_S A^T`` with block-diagonal ``D`` and rank ``r``
  coupling, handled by the matrix-inversion lemma.
* dense: a plain Cholesky factor, used as an oracle on small instances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, sparse

from .covariance import LOG_2PI, cholesky, cov_matrix
from .pcgp import PcgpModel, build_block_conditionals
from .sparse_process import SparseFactor

SIGMA2_FLOOR = 1e-12


def _columns(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


class DenseStructure:
    """``Omega`` stored through its Cholesky factor."""

    def __init__(self, omega: np.ndarray):
        self.n = omega.shape[0]
        self.L = cholesky(omega, 1.0, "correlation matrix")
        self.logdet = float(2.0 * np.sum(np.log(np.diag(self.L))))

    def gram(self, X) -> np.ndarray:
        E = linalg.solve_triangular(self.L, _columns(X), lower=True, check_finite=False)
        return E.T @ E


class SparseStructure:
    """Unit-variance NNGP precision on the reference set, in reference order."""

    def __init__(self, factor: SparseFactor):
        unit = factor.rescaled(factor.model.with_params(mean=0.0, variance=1.0))
        self.factor = unit
        self.n = unit.r
        self.IB = (sparse.identity(self.n, format="csr") - unit.B()).tocsr()
        self.inv_sd = 1.0 / unit.sd
        self.logdet = float(2.0 * np.sum(np.log(unit.sd)))

    def whiten(self, X) -> np.ndarray:
        return (self.IB @ _columns(X)) * self.inv_sd[:, None]

    def gram(self, X) -> np.ndarray:
        E = self.whiten(X)
        return E.T @ E

    def precision(self):
        """Sparse ``Omega^{-1}``."""
        W = self.IB.multiply(self.inv_sd[:, None]).tocsr()
        return (W.T @ W).tocsr()


class BlockLowRankStructure:
    """Unit-variance PCGP covariance ``D + A Cov_S A^T`` at the given targets."""

    def __init__(self, model: PcgpModel, targets):
        ref = SparseStructure(model.factor)
        v = model.model.variance
        bs = build_block_conditionals(model, targets)
        self.blocks = [(b.members, b.nbrs, b.chol / np.sqrt(v)) for b in bs.blocks]
        # whitened coupling V_k = L_k^{-1} A_k, accumulated into the r x r core
        self.V = []
        core = ref.precision().toarray()
        logdet_d = 0.0
        for (members, nbrs, L), b in zip(self.blocks, bs.blocks):
            Vk = linalg.solve_triangular(L, b.coeffs, lower=True, check_finite=False)
            self.V.append(Vk)
            core[np.ix_(nbrs, nbrs)] += Vk.T @ Vk
            logdet_d += 2.0 * np.sum(np.log(np.diag(L)))
        self.core_L = cholesky(0.5 * (core + core.T), 1.0, "low-rank core")
        self.n = len(bs)
        self.r = model.r
        self.logdet = float(logdet_d + ref.logdet + 2.0 * np.sum(np.log(np.diag(self.core_L))))

    def gram(self, X) -> np.ndarray:
        X = _columns(X)
        out = np.zeros((X.shape[1], X.shape[1]))
        T = np.zeros((self.r, X.shape[1]))
        for (members, nbrs, L), Vk in zip(self.blocks, self.V):
            Wk = linalg.solve_triangular(L, X[members], lower=True, check_finite=False)
            out += Wk.T @ Wk
            T[nbrs] += Vk.T @ Wk
        S = linalg.solve_triangular(self.core_L, T, lower=True, check_finite=False)
        return out - S.T @ S


def nngp_structure(factor: SparseFactor) -> SparseStructure:
    return SparseStructure(factor)


def pcgp_structure(model: PcgpModel, targets) -> BlockLowRankStructure:
    return BlockLowRankStructure(model, targets)


def dense_structure(cov_model, locs) -> DenseStructure:
    return DenseStructure(cov_matrix(cov_model.with_params(mean=0.0, variance=1.0), locs))


def gaussian_loglik(structure, y, mu: float, sigma2: float) -> float:
    """``log N(y; mu 1, sigma2 Omega)``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (structure.n,):
        raise ValueError(f"expected {structure.n} data values")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite data")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    e = y - mu
    q = float(structure.gram(e)[0, 0])
    n = structure.n
    return -0.5 * (n * LOG_2PI + n * np.log(sigma2) + structure.logdet + q / sigma2)


def nngp_loglik(factor: SparseFactor, data, mu: float | None = None,
                sigma2: float | None = None) -> float:
    """NNGP log-likelihood of reference-ordered ``data``; parameters default to the model's."""
    m = factor.model
    return gaussian_loglik(SparseStructure(factor), data, m.mean if mu is None else mu,
                           m.variance if sigma2 is None else sigma2)


def pcgp_marginal_loglik(model: PcgpModel, targets, data, mu: float | None = None,
                         sigma2: float | None = None) -> float:
    """Exact PCGP log-density of ``data`` at ``targets`` with the reference values integrated out."""
    m = model.model
    return gaussian_loglik(BlockLowRankStructure(model, targets), data,
                           m.mean if mu is None else mu, m.variance if sigma2 is None else sigma2)


@dataclass(frozen=True)
class MleResult:
    mu: float
    sigma2: float
    loglik: float
    model: str
    n: int
    se_mu: float
    se_sigma2: float
    degenerate: bool = False


def profile_mle(structure, y, model: str = "") -> MleResult:
    """Closed-form GLS estimates of ``(mu, sigma2)`` under ``sigma2 * Omega``."""
    y = np.asarray(y, dtype=np.float64)
    n = structure.n
    if n < 2:
        raise ValueError("need at least two observations")
    if y.shape != (n,) or not np.all(np.isfinite(y)):
        raise ValueError(f"expected {n} finite data values")
    M = structure.gram(np.column_stack([np.ones(n), y]))
    if not M[0, 0] > 0:
        raise np.linalg.LinAlgError("degenerate correlation structure")
    mu = float(M[0, 1] / M[0, 0])
    rss = float(structure.gram(y - mu)[0, 0])
    sigma2 = rss / n
    degenerate = not sigma2 > SIGMA2_FLOOR
    if degenerate:
        sigma2 = SIGMA2_FLOOR
    ll = -0.5 * (n * LOG_2PI + n * np.log(sigma2) + structure.logdet + rss / sigma2)
    return MleResult(mu, sigma2, float(ll), model, n, float(np.sqrt(sigma2 / M[0, 0])),
                     float(sigma2 * np.sqrt(2.0 / n)), degenerate)


class OptimizationError(RuntimeError):
    pass


def nelder_mead(fun, x0, step=0.5, xtol: float = 1e-8, ftol: float = 1e-12, maxiter: int = 5000):
    """Minimise ``fun`` with a Nelder-Mead simplex started at ``x0 + step * e_i``.

    Stops once the simplex diameter is below ``xtol`` and the spread of its
    function values is below ``ftol * max(1, |fun(x0)|)`` (relative, because a
    log-likelihood of size ``n`` carries rounding noise proportional to ``n``).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
    fatol = ftol * max(1.0, abs(float(fun(x0))))
    res = optimize.minimize(fun, x0, method="Nelder-Mead",
                            options={"initial_simplex": simplex, "xatol": xtol, "fatol": fatol,
                                     "maxiter": maxiter, "maxfev": 4 * maxiter})
    if not res.success:
        raise OptimizationError(f"simplex search did not converge: {res.message}")
    return res.x


def optimize_crosscheck(structure, y, init=(0.0, 1.0), maxiter: int = 5000) -> tuple[float, float]:
    """Numerical maximiser of the log-likelihood over ``(mu, sigma2)``.

    Works in ``(mu / s, log sigma2)`` with ``s`` the sample standard deviation,
    evaluating the full likelihood at every step.
    """
    y = np.asarray(y, dtype=np.float64)
    mu0, s20 = (float(v) for v in init)
    if not s20 > 0:
        raise ValueError("initial sigma2 must be positive")
    s = float(np.std(y)) or 1.0

    def nll(t):
        return -gaussian_loglik(structure, y, t[0] * s, float(np.exp(t[1])))

    t = nelder_mead(nll, [mu0 / s, np.log(s20)], maxiter=maxiter)
    return float(t[0] * s), float(np.exp(t[1]))
