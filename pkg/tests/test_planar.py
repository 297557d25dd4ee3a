import numpy as np
import pytest

from tdoaspace import NotInImageError, PlanarConfig, RegionClass
from tdoaspace.planar import (
    aux_vectors,
    classify,
    hexagon_contains,
    invert,
    quadratic_coefficients,
    source_at_infinity,
    tdoa_pair,
)

_H = np.array([[0.0, -1.0], [1.0, 0.0]])


@pytest.fixture
def cfg():
    return PlanarConfig((0, 0), (1, 0), (1, 1))


def random_config(rng):
    while True:
        pts = rng.uniform(-2, 2, size=(3, 2))
        try:
            return PlanarConfig(*pts)
        except ValueError:
            continue


def ellipse_point(cfg, rng):
    """Bisect a = 0 along a segment from the 1-to-1 region into a 2-to-1
    lobe; the crossing lies on the inscribed ellipse with b > 0."""
    for _ in range(50):
        t_in = tdoa_pair(cfg, cfg.sensors.mean(axis=0) + rng.normal(0, 0.1, 2))
        t_out = tdoa_pair(cfg, rng.normal(0, 1, 2) * 40)
        a_in = quadratic_coefficients(cfg, t_in)[0]
        a_out = quadratic_coefficients(cfg, t_out)[0]
        if not (a_in < 0 < a_out):
            continue
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            a_mid = quadratic_coefficients(cfg, t_in + mid * (t_out - t_in))[0]
            lo, hi = (mid, hi) if a_mid < 0 else (lo, mid)
        t = t_in + 0.5 * (lo + hi) * (t_out - t_in)
        if quadratic_coefficients(cfg, t)[1] > 1e-6:
            return t
    raise RuntimeError("could not construct an on-ellipse sample")


class TestConfig:
    def test_rejects_collinear(self):
        with pytest.raises(ValueError):
            PlanarConfig((0, 0), (1, 0), (2, 0))

    def test_derived_quantities(self, cfg):
        assert cfg.d10 == 1.0
        assert abs(cfg.d20 - np.sqrt(2)) < 1e-15
        assert cfg.d21 == 1.0
        assert cfg.W == 1.0

    def test_vertices(self, cfg):
        r0, r1, r2 = cfg.vertices
        assert np.allclose(r0, (1.0, np.sqrt(2)))
        assert np.allclose(r1, (-1.0, 0.0))
        assert np.allclose(r2, (1.0 - np.sqrt(2), -np.sqrt(2)))


class TestAuxAndCoefficients:
    def test_origin_values(self, cfg):
        v, l0 = aux_vectors(cfg, (0.0, 0.0))
        assert np.allclose(v, 0.0)
        expected = _H @ (cfg.d20**2 * cfg.d10_vec - cfg.d10**2 * cfg.d20_vec) / (2 * cfg.W)
        assert np.allclose(l0, expected)
        a, b, c = quadratic_coefficients(cfg, (0.0, 0.0))
        assert abs(a - (-1.0)) < 1e-14  # v = 0 so a = -W^2 = -1

    def test_v_linear_in_tau(self, cfg):
        rng = np.random.default_rng(0)
        t = rng.normal(size=2)
        v1, _ = aux_vectors(cfg, t)
        v2, _ = aux_vectors(cfg, 3.7 * t)
        assert np.allclose(3.7 * v1, v2)

    def test_c_nonnegative(self, cfg):
        rng = np.random.default_rng(1)
        for _ in range(200):
            assert quadratic_coefficients(cfg, rng.normal(size=2) * 3)[2] >= 0.0

    def test_ellipse_tangent_to_facets(self, cfg):
        # a is a convex quadratic along each facet; its minimum over the
        # facet is the tangency point where a vanishes
        facets = [
            (np.array([cfg.d10, -cfg.d20]), np.array([0.0, 1.0])),
            (np.array([-cfg.d10, -cfg.d20]), np.array([0.0, 1.0])),
            (np.array([-cfg.d10, cfg.d20]), np.array([1.0, 0.0])),
            (np.array([-cfg.d10, -cfg.d20]), np.array([1.0, 0.0])),
            (np.array([0.0, cfg.d21]), np.array([1.0, 1.0])),
            (np.array([0.0, -cfg.d21]), np.array([1.0, 1.0])),
        ]
        for origin, direction in facets:
            s = np.linspace(-4, 4, 5)
            vals = [quadratic_coefficients(cfg, origin + si * direction)[0] for si in s]
            coef = np.polyfit(s, vals, 2)  # exact: a is quadratic on a line
            s_star = -coef[1] / (2 * coef[0])
            a_min = np.polyval(coef, s_star)
            assert abs(a_min) <= 1e-9


class TestHexagon:
    def test_vertices_on_boundary(self, cfg):
        for v in cfg.vertices:
            inside, on_bd = hexagon_contains(cfg, v)
            assert inside and on_bd

    def test_origin_strictly_inside(self, cfg):
        inside, on_bd = hexagon_contains(cfg, (0.0, 0.0))
        assert inside and not on_bd

    def test_far_point_outside(self, cfg):
        inside, _ = hexagon_contains(cfg, (2 * cfg.d10, 0.0))
        assert not inside


class TestClassify:
    def test_near_array_is_one_to_one(self, cfg):
        t = tdoa_pair(cfg, (0.3, 0.2))
        cls = classify(cfg, t)
        assert cls.region is RegionClass.INTERIOR_ELLIPSE
        assert cls.multiplicity == 1

    def test_vertex_is_boundary_image(self, cfg):
        cls = classify(cfg, cfg.vertices[0])
        assert cls.region is RegionClass.ON_BOUNDARY
        assert cls.multiplicity == 1

    def test_far_tau_not_in_image(self, cfg):
        cls = classify(cfg, (10.0, -3.0))
        assert cls.region is RegionClass.NOT_IN_IMAGE
        assert cls.multiplicity == 0

    def test_multiplicity_two_iff_lobe(self, cfg):
        rng = np.random.default_rng(3)
        seen_two = 0
        for _ in range(500):
            x = rng.uniform(-4, 4, size=2)
            cls = classify(cfg, tdoa_pair(cfg, x))
            assert cls.multiplicity in (1, 2)
            if cls.multiplicity == 2:
                assert cls.region is RegionClass.TWO_TO_ONE
                assert cls.a > 0 and cls.b > 0
                seen_two += 1
        assert seen_two > 0


class TestInvert:
    def test_reference_example(self, cfg):
        # forward-map oracle at x = (0.5, 2): tau = (0, sqrt(1.25)-sqrt(4.25))
        x = np.array([0.5, 2.0])
        t = tdoa_pair(cfg, x)
        assert abs(t[0]) < 1e-12
        assert abs(t[1] - (np.sqrt(1.25) - np.sqrt(4.25))) < 1e-12
        assert abs(t[1] - (-0.9436)) < 1e-4
        sols = invert(cfg, t)
        assert min(np.linalg.norm(s - x) for s in sols) < 1e-6

    def test_vertices_invert_to_sensors(self, cfg):
        for vertex, sensor in zip(cfg.vertices, cfg.sensors):
            sols = invert(cfg, vertex)
            assert len(sols) == 1
            assert np.linalg.norm(sols[0] - sensor) < 1e-9

    def test_not_in_image_raises(self, cfg):
        with pytest.raises(NotInImageError):
            invert(cfg, (10.0, -3.0))

    def test_roundtrip_random_sources(self, cfg):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            x = rng.uniform(-3, 3, size=2)
            t = tdoa_pair(cfg, x)
            cls = classify(cfg, t)
            sols = invert(cfg, t, cls)
            assert len(sols) == cls.multiplicity >= 1
            for s in sols:
                assert np.linalg.norm(tdoa_pair(cfg, s) - t) < 1e-8
            assert min(np.linalg.norm(s - x) for s in sols) < 1e-8

    def test_roundtrip_random_configs(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            cfg = random_config(rng)
            for _ in range(50):
                x = rng.uniform(-3, 3, size=2)
                t = tdoa_pair(cfg, x)
                sols = invert(cfg, t)
                assert min(np.linalg.norm(s - x) for s in sols) < 1e-8

    def test_discriminant_nonnegative_on_image(self, cfg):
        rng = np.random.default_rng(9)
        for _ in range(500):
            x = rng.uniform(-5, 5, size=2)
            cls = classify(cfg, tdoa_pair(cfg, x))
            assert cls.b**2 - cls.a * cls.c >= -1e-12

    def test_degeneracy_locus_coincident_roots(self, cfg):
        # on the six half-lines from a sensor away from its partner the two
        # roots coincide
        for j, i in [(1, 0), (0, 1), (2, 0), (0, 2), (2, 1), (1, 2)]:
            mj, mi = cfg.sensors[j], cfg.sensors[i]
            for scale in (0.5, 1.3, 2.7):
                x = mj + scale * (mj - mi)
                t = tdoa_pair(cfg, x)
                cls = classify(cfg, t)
                assert cls.region is RegionClass.ON_BOUNDARY
                lam_spread = np.sqrt(max(cls.b**2 - cls.a * cls.c, 0.0)) \
                    / max(abs(cls.a), 1e-12)
                v, _ = aux_vectors(cfg, t)
                assert lam_spread * np.linalg.norm(v) < 1e-6
                sols = invert(cfg, t, cls)
                assert np.linalg.norm(sols[0] - x) < 1e-6

    def test_on_ellipse_single_finite_solution(self, cfg):
        rng = np.random.default_rng(11)
        t = ellipse_point(cfg, rng)
        cls = classify(cfg, t)
        assert cls.region is RegionClass.ON_ELLIPSE
        assert source_at_infinity(cls)
        sols = invert(cfg, t, cls)
        assert len(sols) == 1
        assert np.linalg.norm(tdoa_pair(cfg, sols[0]) - t) < 1e-8

    def test_ambiguous_lobe_returns_both(self, cfg):
        rng = np.random.default_rng(13)
        found = 0
        while found < 20:
            x = rng.uniform(-6, 6, size=2)
            t = tdoa_pair(cfg, x)
            cls = classify(cfg, t)
            if cls.multiplicity != 2:
                continue
            found += 1
            sols = invert(cfg, t, cls)
            assert len(sols) == 2
            d = sorted(np.linalg.norm(s - x) for s in sols)
            assert d[0] < 1e-8      # one solution is the true source
            assert d[1] > 1e-6      # the other is a genuinely distinct point
