"""Regions, the disk transform, metrics and projection maps."""

import numpy as np
import pytest

from vmionet.geometry import (
    DegenerateRegionError,
    GeometryError,
    InvalidRegionError,
    PointOutsideRegionError,
    Region,
    RegionMetric,
    alpha,
    alpha_inv,
    boundary_radius,
    centroid,
    discretize_phi,
    discretize_phi_radii,
    lipschitz_estimate,
    metric_dU,
    metric_dX,
    project_pn,
    random_convex_polygon,
    random_smooth_region,
    reconstruct_psi,
)
from vmionet.sampling import derive_rng


@pytest.fixture(scope="module")
def disk():
    return Region.from_radii(np.ones(256))


@pytest.fixture(scope="module")
def cos3_region():
    th = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
    return Region.from_radii(1.0 + 0.2 * np.cos(3.0 * th))


@pytest.fixture(scope="module")
def region_pool():
    """A mixed bag of regions reused by the metric property tests."""
    pool = [random_smooth_region(derive_rng(5, "pool", i)) for i in range(6)]
    pool += [random_convex_polygon(4 + i % 3, derive_rng(6, "pool", i))
             for i in range(6)]
    return pool


def sample_disk(rng, n):
    r = np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return r[:, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)


class TestCentroid:
    def test_unit_disk(self, disk):
        np.testing.assert_allclose(centroid(disk), 0.0, atol=1e-12)

    def test_unit_square(self):
        sq = Region.from_vertices([(0, 0), (1, 0), (1, 1), (0, 1)])
        np.testing.assert_allclose(centroid(sq), [0.5, 0.5], atol=1e-15)

    def test_random_pentagon_against_monte_carlo(self):
        region = random_convex_polygon(5, 123)
        rng = np.random.default_rng(0)
        pts = rng.uniform(size=(1_000_000, 2))
        inside = region.contains(pts)
        mc = pts[inside].mean(axis=0)
        np.testing.assert_allclose(centroid(region), mc, atol=1e-3)

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(DegenerateRegionError, match="degenerate region"):
            Region.from_vertices([(0, 0), (1, 0), (2, 0)])

    def test_clockwise_rejected(self):
        with pytest.raises(InvalidRegionError):
            Region.from_vertices([(0, 0), (0, 1), (1, 1), (1, 0)])


class TestBoundaryRadius:
    def test_disk_any_angle(self, disk):
        th = np.random.default_rng(1).uniform(0, 2 * np.pi, 50)
        np.testing.assert_allclose(boundary_radius(disk, th), 1.0, atol=1e-12)

    def test_square_axis_direction(self):
        sq = Region.from_vertices([(-1, -1), (1, -1), (1, 1), (-1, 1)])
        assert boundary_radius(sq, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert boundary_radius(sq, np.pi / 4) == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_cos3_analytic(self, cos3_region):
        assert boundary_radius(cos3_region, np.pi / 3) == pytest.approx(0.8, abs=1e-6)

    def test_offset_origin_square(self):
        sq = Region.from_vertices([(-1, -1), (1, -1), (1, 1), (-1, 1)])
        assert boundary_radius(sq, 0.0, origin=(0.3, 0.0)) == pytest.approx(0.7,
                                                                            abs=1e-12)
        assert boundary_radius(sq, np.pi, origin=(0.3, 0.0)) == pytest.approx(
            1.3, abs=1e-12)

    def test_offset_origin_sampled(self, disk):
        # ray-polyline fallback against the exact circle
        r = boundary_radius(disk, 0.25, origin=(0.2, -0.1))
        # |origin + r e(theta)| = 1
        p = np.array([0.2, -0.1]) + r * np.array([np.cos(0.25), np.sin(0.25)])
        assert np.hypot(*p) == pytest.approx(1.0, abs=1e-5)

    def test_origin_outside_rejected(self, disk):
        with pytest.raises(PointOutsideRegionError, match="origin not interior"):
            boundary_radius(disk, 0.0, origin=(2.0, 0.0))


class TestAlpha:
    def test_identity_on_unit_disk(self, disk):
        pts = sample_disk(np.random.default_rng(2), 200)
        np.testing.assert_allclose(alpha(disk, pts), pts, atol=1e-12)

    def test_radius_two_disk_scales(self):
        big = Region.from_radii(np.full(256, 2.0))
        np.testing.assert_allclose(alpha(big, np.array([1.0, 0.0])), [0.5, 0.0],
                                   atol=1e-12)

    def test_centroid_maps_to_origin(self, cos3_region):
        np.testing.assert_allclose(alpha(cos3_region, cos3_region.centroid),
                                   [0.0, 0.0], atol=1e-15)

    def test_round_trip_random_regions(self, region_pool):
        rng = np.random.default_rng(3)
        q = sample_disk(rng, 2000)
        for region in region_pool:
            back = alpha(region, alpha_inv(region, q))
            assert np.abs(back - q).max() < 1e-9

    def test_boundary_maps_to_unit_circle(self, region_pool):
        th = np.linspace(0, 2 * np.pi, 257)[:-1]
        for region in region_pool:
            q = alpha(region, region.boundary_points(th))
            r = np.hypot(q[:, 0], q[:, 1])
            assert np.all(np.abs(r - 1.0) < 1e-9)

    def test_outside_point_rejected(self, disk):
        with pytest.raises(PointOutsideRegionError, match="point outside region"):
            alpha(disk, np.array([1.5, 0.0]))

    def test_alpha_inv_requires_disk_point(self, disk):
        with pytest.raises(PointOutsideRegionError):
            alpha_inv(disk, np.array([1.5, 0.0]))


class TestMetricDU:
    def test_identity_is_zero(self, region_pool):
        for region in region_pool[:4]:
            assert metric_dU(region, region) == 0.0

    def test_concentric_disks(self, disk):
        big = Region.from_radii(np.full(256, 2.0))
        assert metric_dU(disk, big) == pytest.approx(1.0, abs=1e-12)

    def test_translation_equivariance(self, region_pool):
        t = np.array([0.3, 0.4])
        for region in region_pool[:4]:
            assert metric_dU(region, region.translated(t)) == pytest.approx(
                0.5, abs=1e-9)

    def test_symmetry_and_nonnegativity(self, region_pool):
        rng = np.random.default_rng(4)
        for _ in range(30):
            a, b = rng.choice(len(region_pool), 2)
            d_ab = metric_dU(region_pool[a], region_pool[b])
            d_ba = metric_dU(region_pool[b], region_pool[a])
            assert d_ab >= 0
            assert d_ab == pytest.approx(d_ba, abs=1e-14)

    def test_triangle_inequality_on_random_triples(self, region_pool):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            i, j, k = rng.integers(0, len(region_pool), 3)
            a, b, c = region_pool[i], region_pool[j], region_pool[k]
            assert metric_dU(a, c) <= metric_dU(a, b) + metric_dU(b, c) + 1e-12


class TestMetricDX:
    def test_identical_pairs(self, disk):
        pts = sample_disk(np.random.default_rng(6), 100)
        f = np.sin(pts[:, 0])
        assert metric_dX((disk, f), (disk, f), eval_points=pts) == 0.0

    def test_constant_field_shift(self, disk):
        pts = sample_disk(np.random.default_rng(7), 100)
        f = np.cos(pts[:, 1])
        d = metric_dX((disk, f), (disk, f + 0.25), eval_points=pts)
        assert d == pytest.approx(0.25, abs=1e-14)

    def test_matches_direct_recomputation(self, region_pool):
        pts = sample_disk(np.random.default_rng(8), 64)
        a, b = region_pool[0], region_pool[6]
        fa = np.sin(3 * pts[:, 0]) + pts[:, 1]
        fb = pts[:, 0] ** 2
        expected = metric_dU(a, b) + np.abs(fa - fb).max()
        assert metric_dX((a, fa), (b, fb), eval_points=pts) == pytest.approx(
            expected, abs=1e-14)

    def test_empty_eval_points_rejected(self, disk):
        with pytest.raises(ValueError):
            metric_dX((disk, np.array([])), (disk, np.array([])), eval_points=[])


class TestDiscretizeReconstruct:
    def test_disk_four_points(self, disk):
        pts = discretize_phi(disk, 4)
        expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        np.testing.assert_allclose(pts, expected, atol=1e-12)

    def test_cos3_radii_at_lobe_angles(self, cos3_region):
        np.testing.assert_allclose(discretize_phi_radii(cos3_region, 3), 1.2,
                                   atol=1e-6)

    def test_square_radii(self):
        sq = Region.from_vertices([(-1, -1), (1, -1), (1, 1), (-1, 1)])
        np.testing.assert_allclose(discretize_phi_radii(sq, 4), 1.0, atol=1e-12)

    def test_small_n_rejected(self, disk):
        with pytest.raises(ValueError):
            discretize_phi(disk, 2)

    def test_reconstruct_diamond(self):
        pts = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        region = reconstruct_psi(pts)
        assert region.kind == "polygon"
        assert region.area == pytest.approx(2.0, abs=1e-14)

    def test_regular_ngon_is_fixed_point(self):
        th = 2 * np.pi * np.arange(8) / 8
        ngon = Region.from_vertices(np.stack([np.cos(th), np.sin(th)], axis=-1))
        assert metric_dU(ngon, project_pn(ngon, 8)) < 1e-12

    def test_self_intersecting_rejected(self):
        # CCW orientation and nonzero area, but two edges cross
        bowtie = np.array([[0, 1], [3, 0], [3, 2], [0, 0]], dtype=float)
        with pytest.raises(GeometryError, match="polygon"):
            reconstruct_psi(bowtie)

    def test_non_star_input_rejected(self):
        # simple CCW C-shape: rays from the centroid cross the notch twice
        pts = np.array([[0, 0], [3, 0], [3, 1], [1, 1], [1, 2], [3, 2],
                        [3, 3], [0, 3]], dtype=float)
        with pytest.raises(GeometryError):
            reconstruct_psi(pts)


class TestProjectionConvergence:
    def test_disk_closed_form(self, disk):
        cfg = RegionMetric(8192)
        for n in (4, 8, 16, 64):
            d = metric_dU(disk, project_pn(disk, n), cfg)
            assert d == pytest.approx(1.0 - np.cos(np.pi / n), abs=1e-6)

    def test_smooth_region_rates(self):
        cfg = RegionMetric(8192)
        region = random_smooth_region(derive_rng(9, "proj"))
        ds = [metric_dU(region, project_pn(region, n), cfg)
              for n in (8, 16, 32, 64, 128)]
        assert all(a > b for a, b in zip(ds, ds[1:]))
        slope = np.polyfit(np.log([8, 16, 32, 64, 128]), np.log(ds), 1)[0]
        assert slope <= -0.8


class TestLipschitz:
    def test_disk_is_flat(self, disk):
        assert lipschitz_estimate(disk, 4096) == pytest.approx(0.0, abs=1e-9)

    def test_cos3_approaches_analytic_max(self, cos3_region):
        assert lipschitz_estimate(cos3_region, 4096) == pytest.approx(0.6, rel=0.01)

    def test_polygon_refinement_oracle(self):
        region = random_convex_polygon(6, 31)
        coarse = lipschitz_estimate(region, 1024)
        fine = lipschitz_estimate(region, 10_240)
        assert coarse == pytest.approx(fine, rel=0.05)

    def test_grid_floor(self, disk):
        with pytest.raises(ValueError):
            lipschitz_estimate(disk, 128)


class TestGenerators:
    def test_polygons_convex_and_contained(self):
        for seed in range(20):
            k = 4 + seed % 3
            region = random_convex_polygon(k, seed)
            v = region.vertices
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] \
                - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            assert np.all(cross > 0)
            assert v.min() >= 0.0 and v.max() <= 1.0
            assert lipschitz_estimate(region) <= region.lipschitz_bound

    def test_smooth_regions_positive_boundary(self):
        th = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
        for seed in range(10):
            region = random_smooth_region(seed)
            assert np.all(region.boundary_function(th) > 0)
            lo, hi = region.bounding_box()
            assert lo.min() >= 0.0 and hi.max() <= 1.0

    def test_same_seed_bit_identical(self):
        a = random_smooth_region(77)
        b = random_smooth_region(77)
        np.testing.assert_array_equal(a.radii, b.radii)
        np.testing.assert_array_equal(a.centroid, b.centroid)
        p = random_convex_polygon(5, 78)
        q = random_convex_polygon(5, 78)
        np.testing.assert_array_equal(p.vertices, q.vertices)

    def test_invalid_vertex_count(self):
        with pytest.raises(ValueError):
            random_convex_polygon(3, 0)


class TestSerialization:
    def test_polygon_round_trip(self):
        region = random_convex_polygon(5, 9)
        clone = Region.from_dict(region.to_dict())
        np.testing.assert_array_equal(region.vertices, clone.vertices)
        assert clone.lipschitz_bound == region.lipschitz_bound

    def test_sampled_round_trip(self):
        region = random_smooth_region(10)
        clone = Region.from_dict(region.to_dict())
        np.testing.assert_array_equal(region.radii, clone.radii)
        np.testing.assert_array_equal(region.centroid, clone.centroid)
        assert metric_dU(region, clone) == 0.0
