import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsefield.covariance import CovarianceModel, condition, cov_matrix
from sparsefield.geometry import (Domain, knn_indices, locate_cells, make_partition,
                                  regular_grid, uniform_locations)
from sparsefield.models import MPCGP, PCGP
from sparsefield.pcgp import (adjacent_pairs, build_block_conditionals, edge_discontinuity,
                              implied_covariance_mpcgp, implied_covariance_pcgp, make_mpcgp,
                              make_pcgp, make_shifted_partitions, region_neighbor_sets,
                              simulate_mpcgp, simulate_pcgp, straddling_pairs)
from sparsefield.rng import Stream
from sparsefield.sparse_process import (Full, NearestM, build_reference_factor,
                                        make_reference_set, simulate_reference)

PE = CovarianceModel()
BB = CovarianceModel.brownian_bridge()
SQ = Domain.square(10.0)
UNIT = Domain([0.0], [1.0])


def pts(seed, n):
    return np.random.default_rng(seed).uniform(0, 10, (n, 2))


def factor(seed=0, r=30, rule=NearestM(5), model=PE):
    return build_reference_factor(model, make_reference_set(pts(seed, r), rule))


def bridge_factor(r=5, m=2):
    S = (np.arange(1, r + 1) / (r + 1))[:, None]
    return build_reference_factor(BB, make_reference_set(S, NearestM(m)))


def mc_cov_ok(samples, C, k=3.0):
    n = samples.shape[0]
    emp = np.cov(samples.T)
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / n)
    return np.all(np.abs(emp - C) < k * se)


class TestRegionSets:
    def test_all_references(self):
        f = factor()
        nb = region_neighbor_sets(make_partition(SQ, (3, 3)), f.refset.locs, 100)
        assert nb.shape == (9, 30)
        assert all(sorted(row) == list(range(30)) for row in nb)

    def test_single_cell(self):
        f = factor()
        nb = region_neighbor_sets(make_partition(SQ, (1, 1)), f.refset.locs, 4)
        assert list(nb[0]) == list(knn_indices(np.array([[5.0, 5.0]]), f.refset.locs, 4)[0])

    @given(st.integers(1, 50), st.integers(1, 5))
    def test_sizes(self, mr, c):
        f = factor(r=20)
        nb = region_neighbor_sets(make_partition(SQ, (c, c)), f.refset.locs, mr)
        assert nb.shape == (c * c, min(mr, 20))
        assert all(len(set(row)) == len(row) for row in nb)


class TestBlocks:
    def test_single_cell_is_parent_conditional(self):
        f = factor()
        p = make_pcgp(f, make_partition(SQ, (1, 1)), 8)
        T = pts(5, 6)
        bs = build_block_conditionals(p, T)
        assert len(bs.blocks) == 1
        g = condition(PE, T, f.refset.locs[p.region_nbrs[0]])
        np.testing.assert_allclose(bs.blocks[0].cov, g.cov, atol=1e-12)
        assert np.abs(bs.blocks[0].cov - np.diag(np.diag(bs.blocks[0].cov))).max() > 0

    def test_separate_cells(self):
        p = make_pcgp(factor(), make_partition(SQ, (2, 2)), 5)
        bs = build_block_conditionals(p, np.array([[1.0, 1.0], [9.0, 9.0]]))
        assert len(bs.blocks) == 2
        D = bs.block_cov()
        assert D[0, 1] == 0.0 and D[1, 0] == 0.0

    def test_bridge_block(self):
        f = bridge_factor()
        p = make_pcgp(f, make_partition(UNIT, (6,)), 2)
        T = np.array([[0.36], [0.4], [0.47]])  # inside [2/6, 3/6)
        bs = build_block_conditionals(p, T)
        assert len(bs.blocks) == 1
        s1, s2 = 2 / 6, 3 / 6
        t = T[:, 0]
        lo, hi = np.minimum.outer(t, t), np.maximum.outer(t, t)
        exact = (lo - s1) * (s2 - hi) / (s2 - s1)
        np.testing.assert_allclose(bs.blocks[0].cov, exact, atol=1e-10)

    def test_cell_cap(self):
        p = make_pcgp(factor(), make_partition(SQ, (1, 1)), 5, cell_cap=10)
        with pytest.raises(ValueError):
            build_block_conditionals(p, pts(3, 11))

    def test_reference_collision(self):
        f = factor()
        p = make_pcgp(f, make_partition(SQ, (2, 2)), 5)
        with pytest.raises(ValueError):
            build_block_conditionals(p, f.refset.locs[:2])


class TestSimulation:
    def setup_method(self):
        self.f = factor(1, 25, NearestM(4))
        self.p = make_pcgp(self.f, make_partition(SQ, (2, 2)), 6)
        self.T = np.array([[1.0, 1.2], [1.5, 2.0], [2.0, 1.0], [8.0, 8.5], [7.5, 9.0]])
        self.z = simulate_reference(self.f, Stream(0))

    def test_determinism(self):
        a = simulate_pcgp(self.p, self.T, self.z, Stream(3))
        assert np.array_equal(a, simulate_pcgp(self.p, self.T, self.z, Stream(3)))
        assert not np.array_equal(a, simulate_pcgp(self.p, self.T, self.z, Stream(4)))

    def test_conditional_moments(self):
        Y = PCGP(self.p).prepare(self.T).simulate(Stream(8), range(20_000), self.z)
        bs = build_block_conditionals(self.p, self.T)
        assert mc_cov_ok(Y, bs.block_cov())
        mean = bs.offsets() + bs.A() @ self.z
        se = np.sqrt(np.diag(bs.block_cov()) / Y.shape[0])
        assert np.all(np.abs(Y.mean(axis=0) - mean) < 3 * se)

    def test_marginal_moments(self):
        Y = PCGP(self.p).prepare(self.T).simulate(Stream(9), range(20_000))
        assert mc_cov_ok(Y, implied_covariance_pcgp(self.p, self.T))

    def test_ids_make_order_irrelevant(self):
        perm = np.array([4, 2, 0, 3, 1])
        a = simulate_pcgp(self.p, self.T, self.z, Stream(2))
        b = simulate_pcgp(self.p, self.T[perm], self.z, Stream(2), ids=perm)
        np.testing.assert_allclose(b, a[perm], atol=1e-12)


class TestImplied:
    def test_degenerates_to_parent(self):
        f = factor(2, 30, Full())
        p = make_pcgp(f, make_partition(SQ, (1, 1)), 30)
        T = pts(3, 20)
        np.testing.assert_allclose(implied_covariance_pcgp(p, T), cov_matrix(PE, T), atol=1e-8)

    @pytest.mark.parametrize("m", [2, 3, 5])
    def test_bridge_is_exact(self, m):
        f = bridge_factor(5, m)
        p = make_pcgp(f, make_partition(UNIT, (6,)), m)
        T = regular_grid(UNIT, (60,))
        np.testing.assert_allclose(implied_covariance_pcgp(p, T), cov_matrix(BB, T), atol=1e-10)

    def test_kolmogorov_consistency(self):
        p = make_pcgp(factor(4, 40), make_partition(SQ, (3, 3)), 6)
        D2 = pts(5, 50)
        D1 = np.random.default_rng(2).choice(50, 25, replace=False)
        big = implied_covariance_pcgp(p, D2)
        small = implied_covariance_pcgp(p, D2[D1])
        np.testing.assert_allclose(big[np.ix_(D1, D1)], small, atol=1e-12, rtol=0)

    def test_continuity_within_cell(self):
        p = make_pcgp(factor(6, 40), make_partition(SQ, (2, 2)), 6)
        u = np.array([[2.0, 2.0], [3.0, 1.0]])
        gaps = []
        for eps in (1e-2, 1e-3, 1e-4):
            C = implied_covariance_pcgp(p, np.vstack([u, u[0] + eps]))
            gaps.append(abs(C[2, 1] - C[0, 1]) + abs(C[2, 2] - C[0, 0]))
        assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4

    @given(st.integers(0, 1000), st.floats(0.2, 5.0))
    def test_scaling(self, seed, c):
        f = factor(seed, 20)
        T = pts(seed + 1, 6)
        a = build_block_conditionals(make_pcgp(f, make_partition(SQ, (2, 2)), 5), T)
        b = build_block_conditionals(make_pcgp(f, make_partition(SQ, (2, 2)), 5), T, scale=c)
        for x, y in zip(a.blocks, b.blocks):
            np.testing.assert_array_equal(x.coeffs, y.coeffs)
            np.testing.assert_allclose(y.chol @ y.chol.T, c * x.cov, atol=1e-10 * c)


class TestMixture:
    def test_shifted_partitions(self):
        parts = make_shifted_partitions(SQ, (16, 16), 4)
        base = make_partition(SQ, (16, 16))
        assert all(np.array_equal(a, b) for a, b in zip(parts[0].edges, base.edges))
        assert len(make_shifted_partitions(SQ, (16, 16), 1)) == 1
        assert [p.offset for p in parts] == [(0.0, 0.0), (0.3125, 0.0), (0.0, 0.3125),
                                             (0.3125, 0.3125)]
        g = regular_grid(SQ, (150, 150), style="endpoint")
        for p in parts:
            cells = locate_cells(p, g)
            assert np.all((cells >= 0) & (cells < p.K))
            assert np.bincount(cells, minlength=p.K).sum() == g.shape[0]
        with pytest.raises(ValueError):
            make_shifted_partitions(SQ, (4, 4), 3)
        with pytest.raises(ValueError):
            make_shifted_partitions(UNIT, (4,), 4)

    def test_single_component_is_pcgp(self):
        f = factor(3, 40)
        T = regular_grid(SQ, (12, 12))
        z = simulate_reference(f, Stream(1))
        a = simulate_pcgp(make_pcgp(f, make_partition(SQ, (3, 3)), 6), T, z, Stream(5))
        b = simulate_mpcgp(make_mpcgp(f, SQ, (3, 3), 1, 6), T, z, Stream(5))
        assert np.array_equal(a, b)

    def test_conditional_moments(self):
        f = factor(4, 30)
        T = np.array([[2.4, 2.6], [2.6, 2.4], [5.1, 5.0], [7.0, 3.0], [4.9, 5.2]])
        mp = make_mpcgp(f, SQ, (2, 2), 4, 6)
        z = simulate_reference(f, Stream(0))
        Y = MPCGP(mp).prepare(T).simulate(Stream(6), range(20_000), z)
        bsets = mp.blocks(T)
        D = sum(bs.block_cov() for bs in bsets) / 16
        # scale G inflates each block: D_j carries G, so the mixture is sum(G D_j) / G^2
        assert mc_cov_ok(Y, D)
        np.testing.assert_allclose(
            sum(build_block_conditionals(c, T).block_cov() for c in mp.components) / 4, D,
            atol=1e-12)

    def test_marginal_moments(self):
        f = factor(4, 30)
        T = np.array([[2.4, 2.6], [2.6, 2.4], [5.1, 5.0], [7.0, 3.0]])
        mp = make_mpcgp(f, SQ, (2, 2), 2, 6)
        Y = MPCGP(mp).prepare(T).simulate(Stream(7), range(20_000))
        assert mc_cov_ok(Y, implied_covariance_mpcgp(mp, T))

    def test_ids_make_order_irrelevant(self):
        f = factor(4, 30)
        mp = make_mpcgp(f, SQ, (2, 2), 4, 6)
        T = pts(9, 12)
        z = simulate_reference(f, Stream(0))
        perm = np.random.default_rng(0).permutation(12)
        a = simulate_mpcgp(mp, T, z, Stream(2))
        b = simulate_mpcgp(mp, T[perm], z, Stream(2), ids=perm)
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_coefficients_match_pcgp(self):
        f = factor(7, 30)
        mp = make_mpcgp(f, SQ, (2, 2), 4, 6)
        T = pts(8, 10)
        for comp, bs in zip(mp.components, mp.blocks(T)):
            plain = build_block_conditionals(comp, T)
            for x, y in zip(plain.blocks, bs.blocks):
                np.testing.assert_array_equal(x.coeffs, y.coeffs)
                np.testing.assert_array_equal(x.offset, y.offset)

    def test_smoother_edges(self):
        dom = SQ
        f = build_reference_factor(PE, make_reference_set(uniform_locations(dom, 300, Stream(1)),
                                                          NearestM(10)))
        z = simulate_reference(f, Stream(2))
        counts = (60, 60)
        T = regular_grid(dom, counts)
        base = make_partition(dom, (8, 8))
        pairs = straddling_pairs(T, counts, base)
        stats = {}
        for model in (PCGP(make_pcgp(f, base, 10)), MPCGP(make_mpcgp(f, dom, (8, 8), 4, 10))):
            Y = model.prepare(T).simulate(Stream(3), range(100), z)
            stats[model.tag] = edge_discontinuity(Y, pairs)
        assert stats["mpcgp"].mean() < stats["pcgp"].mean()

    def test_adjacent_pairs(self):
        pairs = adjacent_pairs((3, 2))
        assert {tuple(p) for p in pairs} == {(0, 2), (2, 4), (1, 3), (3, 5), (0, 1), (2, 3), (4, 5)}
