import numpy as np
import pytest

from tdoaspace import (
    NoiseSpec,
    RankDeficiencyError,
    denoise,
    gs_locate,
    ls_locate,
    ml_cost,
    ml_refine,
    nonredundant,
    projection_operator,
    srd_ls_locate,
    tdoa_full,
    tdoa_reduced,
)
from tdoaspace.localize import (
    gs_locate_batch,
    ls_locate_batch,
    srd_ls_locate_batch,
)

from conftest import random_array


def random_instance(dim, n, rng, spread=3.0):
    array = random_array(dim, n, rng)
    while True:
        x = rng.uniform(-spread, spread, size=dim)
        if np.linalg.norm(x - array.positions, axis=1).min() > 0.1:
            return array, x


class TestLsLocate:
    def test_noiseless_cross(self, cross):
        x = np.array([1.0, 0.8, -0.3])
        res = ls_locate(cross, tdoa_reduced(cross, x, 0), ref=0)
        assert np.linalg.norm(res.x - x) < 1e-8
        assert res.status == "ok"

    def test_range_estimate_consistent(self, cross):
        x = np.array([0.6, -1.1, 0.9])
        res = ls_locate(cross, tdoa_reduced(cross, x, 0), ref=0)
        assert abs(res.ranges[0] - np.linalg.norm(x - cross.positions[0])) < 1e-8

    def test_noiseless_random_2d_3d(self):
        rng = np.random.default_rng(101)
        for dim in (2, 3):
            for _ in range(50):
                array, x = random_instance(dim, dim + 2, rng)
                res = ls_locate(array, tdoa_reduced(array, x, 0))
                assert np.linalg.norm(res.x - x) < 1e-8

    def test_nonzero_reference(self):
        rng = np.random.default_rng(103)
        array, x = random_instance(3, 5, rng)
        for ref in (0, 2, 5):
            res = ls_locate(array, tdoa_reduced(array, x, ref), ref=ref)
            assert np.linalg.norm(res.x - x) < 1e-8

    def test_too_few_measurements(self):
        rng = np.random.default_rng(105)
        array = random_array(3, 3, rng)
        with pytest.raises(ValueError):
            ls_locate(array, np.zeros(3))

    def test_rank_deficient_geometry(self):
        # collinear array: x is not observable in the transverse plane
        array_pts = [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 0)]
        from tdoaspace import SensorArray
        array = SensorArray(array_pts)
        x = np.array([0.5, 1.0, 1.0])
        with pytest.raises(RankDeficiencyError):
            ls_locate(array, tdoa_reduced(array, x, 0))

    def test_equivariance_under_translation(self):
        rng = np.random.default_rng(107)
        array, x = random_instance(3, 5, rng)
        t = rng.uniform(-20, 20, size=3)
        res = ls_locate(array, tdoa_reduced(array, x, 0))
        res_t = ls_locate(array.translated(t), tdoa_reduced(array.translated(t), x + t, 0))
        assert np.linalg.norm(res_t.x - (res.x + t)) < 1e-8

    def test_equals_nonredundant_of_denoised(self, cross):
        # the denoised reference block is the weighted-LS reduction, so both
        # entry points feed identical numbers to the localizer
        rng = np.random.default_rng(109)
        noise = NoiseSpec.iid(0.015**2, cross.q)
        proj = projection_operator(cross.n, noise)
        tau_hat = tdoa_full(cross, np.array([0.9, 0.2, -1.2])) + rng.normal(0, 0.015, cross.q)
        nr = nonredundant(tau_hat, noise)
        dn = denoise(tau_hat, proj)
        assert np.allclose(nr, dn[:6], atol=1e-12)
        r1 = ls_locate(cross, nr)
        r2 = ls_locate(cross, dn[:6])
        assert np.allclose(r1.x, r2.x, atol=1e-12)

    def test_batch_matches_scalar(self, cross):
        rng = np.random.default_rng(111)
        taus = np.array([tdoa_reduced(cross, rng.uniform(-2, 2, 3), 0) for _ in range(8)])
        taus += rng.normal(0, 0.01, taus.shape)
        xb, rb, ok = ls_locate_batch(cross, taus)
        assert ok.all()
        for k in range(8):
            res = ls_locate(cross, taus[k])
            assert np.allclose(res.x, xb[k], atol=1e-10)
            assert abs(res.ranges[0] - rb[k]) < 1e-10


class TestSrdLsLocate:
    def test_noiseless_exact_and_constraint(self):
        rng = np.random.default_rng(113)
        for dim in (2, 3):
            for _ in range(50):
                array, x = random_instance(dim, dim + 2, rng)
                res = srd_ls_locate(array, tdoa_reduced(array, x, 0))
                assert np.linalg.norm(res.x - x) < 1e-8
                r = np.linalg.norm(res.x - array.positions[0])
                assert abs(r**2 - res.ranges[0] ** 2) < 1e-10

    def test_constraint_under_noise(self, cross):
        rng = np.random.default_rng(115)
        x = np.array([1.2, -0.5, 0.8])
        for _ in range(20):
            tau = tdoa_reduced(cross, x, 0) + rng.normal(0, 0.05, 6)
            res = srd_ls_locate(cross, tau)
            if res.status != "ok":
                continue
            assert abs(np.linalg.norm(res.x - cross.positions[0]) - res.ranges[0]) < 1e-6

    def test_range_nonnegative(self, cross):
        rng = np.random.default_rng(117)
        for _ in range(50):
            tau = rng.normal(0, 0.5, 6)
            res = srd_ls_locate(cross, tau)
            assert res.ranges[0] >= 0

    def test_batch_matches_scalar(self, cross):
        rng = np.random.default_rng(119)
        taus = np.array([tdoa_reduced(cross, rng.uniform(-2, 2, 3), 0) for _ in range(8)])
        taus += rng.normal(0, 0.015, taus.shape)
        xb, rb, fb = srd_ls_locate_batch(cross, taus)
        for k in range(8):
            res = srd_ls_locate(cross, taus[k])
            assert np.allclose(res.x, xb[k], atol=1e-8)

    def test_equivariance(self):
        rng = np.random.default_rng(121)
        array, x = random_instance(3, 6, rng)
        t = rng.uniform(-15, 15, size=3)
        tau = tdoa_reduced(array, x, 0) + rng.normal(0, 0.01, 6)
        res = srd_ls_locate(array, tau)
        res_t = srd_ls_locate(array.translated(t), tau)
        assert np.linalg.norm(res_t.x - (res.x + t)) < 1e-8


class TestGsLocate:
    def test_noiseless_full_set(self, cross):
        x = np.array([1.0, 0.8, -0.3])
        res = gs_locate(cross, tdoa_full(cross, x))
        assert np.linalg.norm(res.x - x) < 1e-8
        # each recovered range matches the distance to its sensor
        d = np.linalg.norm(x - cross.positions[:6], axis=1)
        assert np.abs(res.ranges - d).max() < 1e-8

    def test_noiseless_random(self):
        rng = np.random.default_rng(123)
        for dim in (2, 3):
            for _ in range(30):
                array, x = random_instance(dim, dim + 2, rng)
                res = gs_locate(array, tdoa_full(array, x))
                assert np.linalg.norm(res.x - x) < 1e-8

    def test_feasible_input_same_result(self, cross):
        # a feasible (denoised) vector gives the same answer raw or denoised
        noise = NoiseSpec.iid(1e-4, cross.q)
        proj = projection_operator(cross.n, noise)
        tau = tdoa_full(cross, np.array([0.4, 1.3, -0.6]))
        assert np.allclose(gs_locate(cross, tau).x,
                           gs_locate(cross, denoise(tau, proj)).x, atol=1e-10)

    def test_partial_pair_set(self, cross):
        x = np.array([0.7, -0.9, 1.1])
        pairs = list(cross.pairs[:6]) + [(2, 1), (4, 3)]
        idx = [cross.pair_position(p) for p in pairs]
        tau = tdoa_full(cross, x)[idx]
        res = gs_locate(cross, tau, pairs=pairs)
        assert np.linalg.norm(res.x - x) < 1e-8

    def test_underdetermined_pairs_raise(self, cross):
        with pytest.raises(RankDeficiencyError):
            gs_locate(cross, np.zeros(2), pairs=[(1, 0), (2, 0)])

    def test_batch_matches_scalar(self, cross):
        rng = np.random.default_rng(125)
        taus = np.array([tdoa_full(cross, rng.uniform(-2, 2, 3)) for _ in range(6)])
        taus += rng.normal(0, 0.01, taus.shape)
        xb, ranges, ok = gs_locate_batch(cross, taus)
        assert ok.all()
        for k in range(6):
            assert np.allclose(gs_locate(cross, taus[k]).x, xb[k], atol=1e-10)


class TestMlCost:
    def test_zero_at_truth(self, cross):
        x = np.array([0.5, 0.5, 0.5])
        noise = NoiseSpec.iid(1e-4, cross.q)
        assert ml_cost(cross, tdoa_full(cross, x), noise, x) < 1e-20

    def test_identity_sigma_is_euclidean(self, cross):
        rng = np.random.default_rng(127)
        x = np.array([1.0, -0.4, 0.2])
        tau_hat = tdoa_full(cross, x) + rng.normal(0, 0.1, cross.q)
        cost = ml_cost(cross, tau_hat, NoiseSpec.iid(1.0, cross.q), x)
        assert abs(cost - np.sum((tau_hat - tdoa_full(cross, x)) ** 2)) < 1e-12

    def test_decomposes_through_projection(self, cross):
        rng = np.random.default_rng(129)
        noise = NoiseSpec.iid(0.02**2, cross.q)
        proj = projection_operator(cross.n, noise)
        from tdoaspace import mahalanobis_norm
        for _ in range(20):
            x = rng.uniform(-2, 2, 3)
            tau_hat = rng.normal(0, 1, cross.q)
            p = denoise(tau_hat, proj)
            lhs = ml_cost(cross, tau_hat, noise, x)
            rhs = mahalanobis_norm(tau_hat - p, noise) ** 2 \
                + ml_cost(cross, p, noise, x)
            assert abs(lhs - rhs) < 1e-9 * max(1.0, lhs)


class TestMlRefine:
    def test_fixed_point_at_truth(self, cross):
        x = np.array([0.9, 0.1, -0.7])
        noise = NoiseSpec.iid(1e-4, cross.q)
        res = ml_refine(cross, tdoa_full(cross, x), noise, x)
        assert np.linalg.norm(res.x - x) < 1e-10
        assert res.status == "ok"

    def test_noiseless_recovery_from_offset_start(self):
        rng = np.random.default_rng(131)
        for dim in (2, 3):
            for _ in range(20):
                array, x = random_instance(dim, dim + 3, rng)
                noise = NoiseSpec.iid(1e-4, array.q)
                x0 = x + rng.normal(0, 0.05, dim)
                res = ml_refine(array, tdoa_full(array, x), noise, x0)
                assert np.linalg.norm(res.x - x) < 1e-8

    def test_cost_non_increasing(self, cross):
        rng = np.random.default_rng(133)
        noise = NoiseSpec.iid(0.015**2, cross.q)
        x = np.array([1.1, -0.3, 0.6])
        tau_hat = tdoa_full(cross, x) + rng.normal(0, 0.015, cross.q)
        start = gs_locate(cross, tau_hat).x
        c_start = ml_cost(cross, tau_hat, noise, start)
        res = ml_refine(cross, tau_hat, noise, start)
        assert ml_cost(cross, tau_hat, noise, res.x) <= c_start + 1e-15
