import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsefield import _kernels_py as py
from sparsefield._backend import BACKEND, compiled_kernels
from sparsefield.covariance import CovarianceModel, PoweredExponential
from sparsefield.geometry import Domain, uniform_locations
from sparsefield.rng import Stream
from sparsefield.sparse_process import Full, NearestM, Radius, make_reference_set

cy = compiled_kernels()
needs_cy = pytest.mark.skipif(cy is None, reason="compiled extension not built")
SQ = Domain.square(10.0)


def problem(seed, r, rule, model):
    rs = make_reference_set(uniform_locations(SQ, r, Stream(seed)), rule)
    return rs, model.kernel_args()


@needs_cy
class TestParity:
    @pytest.mark.parametrize("model", [CovarianceModel(), CovarianceModel(family=PoweredExponential.from_phi_nu(2.0, 1.0)),
                                       CovarianceModel(variance=3.0)])
    def test_cov_cross(self, model):
        X = uniform_locations(SQ, 40, Stream(0))
        Y = uniform_locations(SQ, 30, Stream(1))
        args = model.kernel_args()
        np.testing.assert_allclose(cy.cov_cross(X, Y, *args), py.cov_cross(X, Y, *args),
                                   rtol=1e-13, atol=1e-15)
        np.testing.assert_array_equal(np.diag(cy.cov_cross(X, X, *args)), model.variance)

    def test_bridge(self):
        model = CovarianceModel.brownian_bridge()
        X = np.linspace(0, 1, 11)[:, None]
        np.testing.assert_allclose(cy.cov_cross(X, X, *model.kernel_args()),
                                   py.cov_cross(X, X, *model.kernel_args()), atol=1e-15)

    @pytest.mark.parametrize("rule", [NearestM(1), NearestM(10), Radius(2.0), Full()])
    def test_vecchia(self, rule):
        rs, args = problem(2, 120, rule, CovarianceModel())
        a = cy.vecchia_factor(rs.locs, rs.locs, rs.nbr, rs.counts, *args, 1e-10)
        b = py.vecchia_factor(rs.locs, rs.locs, rs.nbr, rs.counts, *args, 1e-10)
        np.testing.assert_allclose(a[0], b[0], atol=1e-8)
        np.testing.assert_allclose(a[1], b[1], atol=1e-10)
        np.testing.assert_array_equal(a[2], b[2])

    def test_singular_status(self):
        locs = np.array([[0.0, 0.0], [1e-9, 0.0], [1.0, 1.0]])
        nbr = np.array([[0, 1]], dtype=np.int64)
        counts = np.array([2], dtype=np.int64)
        args = CovarianceModel(family=PoweredExponential(2.0, 2.0)).kernel_args()
        a = cy.vecchia_factor(locs[2:], locs, nbr, counts, *args, 0.0)
        b = py.vecchia_factor(locs[2:], locs, nbr, counts, *args, 0.0)
        assert a[2][0] == b[2][0] == 2

    @given(st.integers(0, 10_000), st.integers(1, 12))
    def test_ancestral(self, seed, m):
        rs, args = problem(seed, 60, NearestM(m), CovarianceModel())
        coeffs, condvar, _ = py.vecchia_factor(rs.locs, rs.locs, rs.nbr, rs.counts, *args, 1e-10)
        sd = np.sqrt(np.maximum(condvar, 0))
        W = np.random.default_rng(seed).standard_normal((3, 60))
        np.testing.assert_allclose(cy.ancestral_sample(rs.nbr, rs.counts, coeffs, sd, 0.5, W),
                                   py.ancestral_sample(rs.nbr, rs.counts, coeffs, sd, 0.5, W),
                                   atol=1e-12)


def _run(env_value):
    env = dict(os.environ)
    env.pop("SPARSEFIELD_PURE_PYTHON", None)
    if env_value is not None:
        env["SPARSEFIELD_PURE_PYTHON"] = env_value
    code = ("import json, numpy as np, sparsefield as s;"
            "from sparsefield.covariance import CovarianceModel, PoweredExponential;"
            "from sparsefield.geometry import Domain, uniform_locations;"
            "from sparsefield.sparse_process import NearestM, make_reference_set, "
            "build_reference_factor, simulate_reference;"
            "f = build_reference_factor(CovarianceModel(), make_reference_set("
            "uniform_locations(Domain.square(10.0), 200, 1), NearestM(8)));"
            "print(json.dumps([s.BACKEND, simulate_reference(f, 2).tolist()]))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout)


class TestSelection:
    def test_env_forces_python(self):
        backend, z = _run("1")
        assert backend == "python"
        assert len(z) == 200

    @needs_cy
    def test_default_is_compiled_and_agrees(self):
        b1, z1 = _run(None)
        b2, z2 = _run("1")
        assert b1 == "cython" and BACKEND in ("cython", "python")
        np.testing.assert_allclose(z1, z2, atol=1e-9)
