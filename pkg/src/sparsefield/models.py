"""A uniform simulate / implied-covariance / log-likelihood interface over models.

``prepare(targets)`` does all geometry-dependent work once; the returned object
draws replications from per-replication streams.  For replication ``i`` under a
root stream, the reference innovations come from ``root.child(i, "reference")``
and the target innovations from ``root.child(i, "targets")`` addressed by
target position, so any model sharing a root shares its reference values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import inference
from .covariance import CovarianceModel, cholesky, cov_matrix
from .pcgp import (MpcgpModel, PcgpModel, component_stream, implied_covariance_mpcgp,
                   implied_covariance_pcgp, sample_blocks, sample_mpcgp)
from .rng import Stream, as_stream
from .sparse_process import (Radius, SparseFactor, implied_covariance_nngp, sample_reference,
                             target_conditionals)

DENSE_CAP = 6000


def reference_draws(factor: SparseFactor, root: Stream, reps) -> np.ndarray:
    W = np.stack([root.child(i, "reference").normals(factor.r) for i in reps])
    return sample_reference(factor, W)


def target_innovations(root: Stream, reps, n: int, component: int = 0) -> np.ndarray:
    return np.stack([component_stream(root.child(i, "targets"), component).normals(n) for i in reps])


class _Prepared:
    n: int
    factor: SparseFactor | None = None

    def sample(self, Z, root: Stream, reps) -> np.ndarray:
        raise NotImplementedError

    def simulate(self, rng, reps, z_ref=None) -> np.ndarray:
        """(len(reps), n) draws; ``z_ref`` fixes the reference values for all of them."""
        root = as_stream(rng)
        reps = list(reps)
        if self.factor is None:
            Z = None
        elif z_ref is None:
            Z = reference_draws(self.factor, root, reps)
        else:
            Z = np.broadcast_to(np.asarray(z_ref, dtype=np.float64), (len(reps), self.factor.r))
        return self.sample(Z, root, reps)


class _DensePrepared(_Prepared):
    def __init__(self, model: CovarianceModel, targets):
        C = cov_matrix(model, targets)
        self.n = C.shape[0]
        if self.n > DENSE_CAP:
            raise ValueError(f"dense simulation is capped at {DENSE_CAP} locations")
        self.L = cholesky(C, model.variance, "parent covariance")
        self.mean = model.mean

    def sample(self, Z, root, reps):
        return self.mean + target_innovations(root, reps, self.n) @ self.L.T


class _NngpPrepared(_Prepared):
    def __init__(self, factor: SparseFactor, targets, rule=None):
        self.factor = factor
        self.conds = target_conditionals(factor.model, factor.refset, targets, rule)
        self.n = len(self.conds)
        self.A = self.conds.A()
        self.sd = self.conds.sd

    def sample(self, Z, root, reps):
        zc = np.asarray(Z) - self.factor.model.mean
        W = target_innovations(root, reps, self.n)
        return self.factor.model.mean + (self.A @ zc.T).T + self.sd * W


class _PcgpPrepared(_Prepared):
    def __init__(self, model: PcgpModel, targets):
        self.factor = model.factor
        self.bs = model.blocks(targets)
        self.n = len(self.bs)

    def sample(self, Z, root, reps):
        return sample_blocks(self.bs, Z, target_innovations(root, reps, self.n))


class _MpcgpPrepared(_Prepared):
    def __init__(self, model: MpcgpModel, targets):
        self.factor = model.factor
        self.bsets = model.blocks(targets)
        self.n = len(self.bsets[0])

    def sample(self, Z, root, reps):
        Ws = [target_innovations(root, reps, self.n, j) for j in range(len(self.bsets))]
        return sample_mpcgp(self.bsets, Z, Ws)


@dataclass(frozen=True)
class ParentGP:
    model: CovarianceModel
    tag = "parent"
    factor = None

    def prepare(self, targets) -> _Prepared:
        return _DensePrepared(self.model, targets)

    def implied_covariance(self, targets) -> np.ndarray:
        return cov_matrix(self.model, targets)

    def structure(self, targets):
        return inference.dense_structure(self.model, targets)

    def loglik(self, data, targets, mu=None, sigma2=None) -> float:
        m = self.model
        return inference.gaussian_loglik(self.structure(targets), data,
                                         m.mean if mu is None else mu,
                                         m.variance if sigma2 is None else sigma2)


@dataclass(frozen=True)
class NNGP:
    """Sparse reference factor with conditionally independent targets.

    The likelihood is defined for data on the reference set, in reference order.
    """

    factor: SparseFactor
    tag = "nngp"

    def prepare(self, targets, rule=None) -> _Prepared:
        return _NngpPrepared(self.factor, targets, rule)

    def implied_covariance(self, targets=None, which: str = "targets") -> np.ndarray:
        if targets is None:
            return implied_covariance_nngp(self.factor, None, "reference")
        conds = target_conditionals(self.factor.model, self.factor.refset, targets)
        return implied_covariance_nngp(self.factor, conds, which)

    def structure(self, targets=None):
        return inference.nngp_structure(self.factor)

    def loglik(self, data, targets=None, mu=None, sigma2=None) -> float:
        return inference.nngp_loglik(self.factor, data, mu, sigma2)


@dataclass(frozen=True)
class RNGP(NNGP):
    tag = "rngp"

    def __post_init__(self):
        if not isinstance(self.factor.refset.rule, Radius):
            raise ValueError("an RNGP needs a radius neighbour rule")


@dataclass(frozen=True)
class PCGP:
    pcgp: PcgpModel
    tag = "pcgp"

    @property
    def factor(self) -> SparseFactor:
        return self.pcgp.factor

    def prepare(self, targets) -> _Prepared:
        return _PcgpPrepared(self.pcgp, targets)

    def implied_covariance(self, targets) -> np.ndarray:
        return implied_covariance_pcgp(self.pcgp, targets)

    def structure(self, targets):
        return inference.pcgp_structure(self.pcgp, targets)

    def loglik(self, data, targets, mu=None, sigma2=None) -> float:
        return inference.pcgp_marginal_loglik(self.pcgp, targets, data, mu, sigma2)


@dataclass(frozen=True)
class MPCGP:
    mpcgp: MpcgpModel
    tag = "mpcgp"

    @property
    def factor(self) -> SparseFactor:
        return self.mpcgp.factor

    def prepare(self, targets) -> _Prepared:
        return _MpcgpPrepared(self.mpcgp, targets)

    def implied_covariance(self, targets) -> np.ndarray:
        return implied_covariance_mpcgp(self.mpcgp, targets)


FieldModel = ParentGP | NNGP | RNGP | PCGP | MPCGP
