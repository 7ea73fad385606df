import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from sparsefield.covariance import CovarianceModel
from sparsefield.functionals import (INTERVALS, BridgeLaws, batch_estimate, block_h1_conditional_variance,
                                     bb_exact_laws, chunks, divergence_probe, evaluate, h1, h2, h3,
                                     mu_g_indicator, nested_level_draws, nngp_h1_conditional_variance,
                                     partial_sum_limit_coeffs)
from sparsefield.geometry import Domain, GridSchedule, make_partition, regular_grid, uniform_locations
from sparsefield.models import NNGP, PCGP
from sparsefield.pcgp import build_block_conditionals, make_mpcgp, make_pcgp
from sparsefield.rng import Stream
from sparsefield.sparse_process import (NearestM, build_reference_factor, make_reference_set,
                                        target_conditionals)

BB = CovarianceModel.brownian_bridge()
UNIT = Domain([0.0], [1.0])
SQ = Domain.square(10.0)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def bridge(S, m=2):
    S = np.asarray(S, dtype=np.float64)[:, None]
    return build_reference_factor(BB, make_reference_set(S, NearestM(m)))


class TestFunctionals:
    def test_examples(self):
        v = np.array([-3.0, -1.0, 0.25, 1.5, 0.0])
        assert h1(UNIT, v) == pytest.approx(-0.45)
        assert h1(SQ, v) == pytest.approx(-45.0)
        assert h2(v, INTERVALS["A1"]) == pytest.approx(0.2)
        assert h2(v, INTERVALS["A2"]) == pytest.approx(0.2)
        assert h2(v, INTERVALS["A3"]) == pytest.approx(0.2)  # open: 0 is excluded
        assert h3(v) == (-3.0, 1.5)

    def test_batch_axis(self):
        V = np.arange(12.0).reshape(3, 4)
        np.testing.assert_allclose(h1(UNIT, V), V.mean(axis=1))
        lo, hi = h3(V)
        np.testing.assert_array_equal(lo, V[:, 0])
        np.testing.assert_array_equal(hi, V[:, -1])

    def test_errors(self):
        with pytest.raises(ValueError):
            h1(UNIT, [])
        with pytest.raises(ValueError):
            h2([1.0], (1.0, 1.0))

    def test_evaluate(self):
        r = evaluate(UNIT, [0.1, 1.2, -0.5], model="nngp", replication=4)
        assert r.M == 3 and r.model == "nngp" and r.replication == 4
        assert set(r.h2) == set(INTERVALS)
        assert r.h3 == (-0.5, 1.2)

    @given(arrays(np.float64, st.integers(1, 30), elements=finite), finite,
           st.floats(0.1, 10))
    def test_affine(self, v, b, a):
        assert h1(UNIT, a * v + b) == pytest.approx(a * h1(UNIT, v) + b, abs=1e-8)
        lo, hi = h3(a * v + b)
        assert (lo, hi) == (pytest.approx(a * v.min() + b), pytest.approx(a * v.max() + b))

    @given(arrays(np.float64, st.integers(1, 30), elements=finite))
    def test_fractions(self, v):
        tot = sum(h2(v, iv) for iv in [(-np.inf, 0.0), (0.0, np.inf)]) + np.mean(v == 0)
        assert 0 <= h2(v, (0.0, 1.0)) <= 1
        assert tot == pytest.approx(1.0)

    @given(arrays(np.float64, st.integers(1, 20), elements=finite))
    def test_permutation(self, v):
        p = np.random.default_rng(0).permutation(len(v))
        assert h1(UNIT, v[p]) == pytest.approx(h1(UNIT, v))
        assert h3(v[p]) == h3(v)


class TestSummaries:
    def test_batch_estimate(self):
        x = np.arange(40.0)
        est, se = batch_estimate(x)
        per = np.array([x[2 * i:2 * i + 2].mean() for i in range(20)])
        assert est == pytest.approx(19.5)
        assert se == pytest.approx(per.std(ddof=1) / np.sqrt(20))
        with pytest.raises(ValueError):
            batch_estimate(np.arange(39.0))

    def test_batch_se_calibrated(self):
        rng = np.random.default_rng(1)
        ses = [batch_estimate(rng.standard_normal(2000))[1] for _ in range(200)]
        assert np.mean(ses) == pytest.approx(1 / np.sqrt(2000), rel=0.05)

    def test_chunks(self):
        parts = list(chunks(10, 3, budget=9))
        assert [list(p) for p in parts] == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9]]
        assert list(chunks(2, 10**9, budget=5)) == [range(0, 1), range(1, 2)]


class TestLimitQuantities:
    @pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (0.7, 0.3), (-1.2, 2.5)])
    def test_mu_g(self, mu, sigma):
        for iv in INTERVALS.values():
            want = integrate.quad(lambda w: stats.norm.pdf(w), (iv[0] - mu) / sigma,
                                  (iv[1] - mu) / sigma)[0]
            assert mu_g_indicator(mu, sigma, iv) == pytest.approx(want, abs=1e-12)

    def test_mu_g_gauss_hermite(self):
        x, w = np.polynomial.hermite_e.hermegauss(64)
        smooth = lambda v: np.exp(-v * v)  # a smooth function checks the node convention
        assert np.sum(w * smooth(0.5 + 0.8 * x)) / np.sqrt(2 * np.pi) == pytest.approx(
            np.exp(-0.25 / 2.28) / np.sqrt(2.28), rel=1e-12)
        assert mu_g_indicator(np.array([0.0, 1.0]), 1.0, (0, 1)).shape == (2,)
        with pytest.raises(ValueError):
            mu_g_indicator(0.0, 0.0, (0, 1))

    def test_partial_sum_two_points(self):
        f = bridge([0.5], 1)
        conds = target_conditionals(BB, f.refset, np.array([[0.25], [0.75]]))
        np.testing.assert_allclose(conds.coeffs[:, 0], [0.5, 0.5])
        np.testing.assert_allclose(partial_sum_limit_coeffs(conds), [0.5])

    def test_partial_sum_converges(self):
        f = bridge([0.5], 1)
        def c(n, style):
            T = regular_grid(UNIT, (n,), style=style)
            return partial_sum_limit_coeffs(target_conditionals(BB, f.refset, T[T[:, 0] != 0.5]))[0]

        # limit: the integral of 4 min(t, 1/2)(1 - max(t, 1/2)) over [0, 1]
        for n in (8, 64, 512):
            assert c(n, "cell") == pytest.approx(0.5, abs=1e-12)
        vals = [c(n, "endpoint") for n in (9, 65, 513, 4097)]
        gaps = np.abs(np.diff(vals))
        assert np.all(gaps[1:] < gaps[:-1])
        assert vals[-1] == pytest.approx(0.5, abs=1e-3)

    def test_nngp_condvar(self):
        f = bridge(np.arange(1, 6) / 6)
        T = regular_grid(UNIT, (60,))
        conds = target_conditionals(BB, f.refset, T)
        assert nngp_h1_conditional_variance(UNIT, conds) == pytest.approx(
            np.sum(conds.sd ** 2) / 3600)

    def test_block_condvar(self):
        f = bridge(np.arange(1, 6) / 6)
        p = make_pcgp(f, make_partition(UNIT, (6,)), 2)
        T = regular_grid(UNIT, (60,))
        bs = build_block_conditionals(p, T)
        assert block_h1_conditional_variance(UNIT, bs) == pytest.approx(
            bs.block_cov().sum() / 3600, rel=1e-12)

    def test_block_condvar_mixture(self):
        dom = SQ
        f = build_reference_factor(CovarianceModel(), make_reference_set(
            uniform_locations(dom, 40, Stream(0)), NearestM(5)))
        mp = make_mpcgp(f, dom, (2, 2), 4, 6)
        T = regular_grid(dom, (10, 10))
        bsets = mp.blocks(T)
        D = sum(bs.block_cov() for bs in bsets) / 16
        assert block_h1_conditional_variance(dom, bsets) == pytest.approx(
            D.sum(), rel=1e-10)  # volume and target count are both 100


class TestBridgeLaws:
    def test_moments_by_quadrature(self):
        law = bb_exact_laws()
        assert integrate.quad(law.max_density, 0, np.inf)[0] == pytest.approx(1.0, abs=1e-10)
        m1 = integrate.quad(lambda x: x * law.max_density(x), 0, np.inf)[0]
        m2 = integrate.quad(lambda x: x * x * law.max_density(x), 0, np.inf)[0]
        assert m1 == pytest.approx(law.max_mean, abs=1e-10)
        assert m2 - m1 ** 2 == pytest.approx(law.max_var, abs=1e-10)
        assert law.max_mean == pytest.approx(0.6266570686577501)
        assert law.max_var == pytest.approx(0.1073009183012758)
        assert integrate.quad(law.integral_density, -np.inf, np.inf)[0] == pytest.approx(1.0)

    @given(st.floats(0.0, 3.0))
    def test_cdf_density(self, x):
        law = BridgeLaws()
        assert law.max_cdf(x) == pytest.approx(integrate.quad(law.max_density, 0, x)[0], abs=1e-10)

    def test_integral_variance(self):
        # double integral of the bridge kernel min(s,t) - st over the unit square
        v = integrate.dblquad(lambda s, t: min(s, t) - s * t, 0, 1, 0, 1)[0]
        assert v == pytest.approx(BridgeLaws().integral_var, abs=1e-8)


class TestProbe:
    def setup_method(self):
        dom = Domain([0.0], [10.0])
        self.dom = dom
        self.f = build_reference_factor(CovarianceModel(), make_reference_set(
            uniform_locations(dom, 12, Stream(4)), NearestM(3)))
        self.sched = GridSchedule(dom, 12)

    def test_nested(self):
        d = nested_level_draws(NNGP(self.f), self.sched, [0, 2], 50, Stream(1))
        assert d["M"] == [13, 49]
        assert d["h1"].shape == (2, 50)
        assert np.all(d["max"][1] >= d["max"][0]) and np.all(d["min"][1] <= d["min"][0])

    def test_mapper_and_chunking_invariant(self):
        a = nested_level_draws(NNGP(self.f), self.sched, [0, 1], 30, Stream(1))
        b = nested_level_draws(NNGP(self.f), self.sched, [0, 1], 30, Stream(1),
                               mapper=lambda fn, xs: [fn(x) for x in reversed(xs)][::-1])
        np.testing.assert_array_equal(a["max"], b["max"])

    def test_nngp_max_grows_pcgp_settles(self):
        z = np.zeros(self.f.r)
        nn = divergence_probe(NNGP(self.f), self.sched, [1, 5], 400, Stream(2), z_ref=z)
        assert nn[1].mean_max - nn[0].mean_max > 3 * np.hypot(nn[0].se_max, nn[1].se_max)
        pc = PCGP(make_pcgp(self.f, make_partition(self.dom, (3,)), 6))
        p = divergence_probe(pc, self.sched, [4, 5], 400, Stream(2), z_ref=z)
        assert abs(p[1].mean_max - p[0].mean_max) < 3 * np.hypot(p[0].se_max, p[1].se_max)
