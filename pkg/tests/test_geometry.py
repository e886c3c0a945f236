import numpy as np
import pytest
from scipy.spatial import cKDTree

from vofml import geometry as geo

from oracles import box_fraction_mc, halfspace_indicator


def random_unit_vector(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestUnitCube:
    def test_vertices_at_half_edge(self):
        cube = geo.unit_cube((0.0, 0.0, 0.0), 1.0)
        assert cube.n_vertices == 8
        assert cube.n_faces == 6
        assert np.allclose(np.sort(np.unique(cube.vertices)), [-0.5, 0.5])

    def test_volume_scales_with_edge_cubed(self):
        assert geo.volume(geo.unit_cube((0, 0, 0), 2.0)) == pytest.approx(8.0)

    def test_offset_center(self):
        cube = geo.unit_cube((1.0, 0.0, 0.0), 1.0)
        assert set(np.unique(cube.vertices[:, 0])) == {0.5, 1.5}

    def test_validates(self):
        geo.validate(geo.unit_cube((0.3, -0.2, 0.7), 1.3))


class TestClip:
    def test_axis_plane_halves_cube(self):
        cube = geo.unit_cube((0, 0, 0), 1.0)
        half = geo.clip(cube, geo.HalfSpace(np.array([1.0, 0, 0]), 0.0))
        geo.validate(half)
        assert geo.volume(half) == pytest.approx(0.5, abs=1e-12)
        assert half.vertices[:, 0].max() == pytest.approx(0.0, abs=1e-12)
        assert half.vertices[:, 0].min() == pytest.approx(-0.5, abs=1e-12)

    def test_missing_plane_returns_input(self):
        cube = geo.unit_cube((0, 0, 0), 1.0)
        assert geo.clip(cube, geo.HalfSpace(np.array([1.0, 0, 0]), 2.0)) is cube

    def test_fully_outside_is_empty(self):
        cube = geo.unit_cube((0, 0, 0), 1.0)
        assert geo.clip(cube, geo.HalfSpace(np.array([-1.0, 0, 0]), -2.0)) is None

    def test_diagonal_plane_through_centroid(self):
        cube = geo.unit_cube((0, 0, 0), 1.0)
        n = np.ones(3) / np.sqrt(3.0)
        part = geo.clip(cube, geo.HalfSpace(n, 0.0))
        geo.validate(part)
        assert geo.volume(part) == pytest.approx(0.5, abs=1e-12)

    def test_plane_hinging_on_edges(self):
        # plane x = z contains two opposite cube edges; the cap degenerates
        cube = geo.unit_cube((0, 0, 0), 1.0)
        n = np.array([1.0, 0.0, -1.0]) / np.sqrt(2.0)
        part = geo.clip(cube, geo.HalfSpace(n, 0.0))
        geo.validate(part)
        assert geo.volume(part) == pytest.approx(0.5, abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        cube = geo.unit_cube((0, 0, 0), 1.0)
        for _ in range(25):
            h = geo.HalfSpace(random_unit_vector(rng), rng.uniform(-0.4, 0.4))
            once = geo.clip(cube, h)
            if once is None:
                continue
            twice = geo.clip(once, h)
            assert abs(geo.volume(twice) - geo.volume(once)) <= 1e-12

    def test_complementarity(self):
        rng = np.random.default_rng(8)
        cube = geo.unit_cube((0, 0, 0), 1.0)
        for _ in range(50):
            h = geo.HalfSpace(random_unit_vector(rng), rng.uniform(-0.8, 0.8))
            a = geo.volume(geo.clip(cube, h))
            b = geo.volume(geo.clip(cube, h.complement()))
            assert abs(a + b - 1.0) <= 1e-10


class TestVolume:
    def test_unit_cube(self):
        assert geo.volume(geo.unit_cube((0, 0, 0), 1.0)) == pytest.approx(1.0)

    def test_empty_is_zero(self):
        assert geo.volume(None) == 0.0

    def test_regular_tetrahedron(self):
        # vertices of a regular tetrahedron scaled to edge length 1
        raw = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        verts = raw / (2.0 * np.sqrt(2.0))
        faces = [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]
        tet = geo.ConvexPolytope.from_faces(verts, faces)
        geo.validate(tet)
        assert geo.volume(tet) == pytest.approx(1.0 / (6.0 * np.sqrt(2.0)), rel=1e-12)

    def test_three_plane_clip_against_monte_carlo(self):
        rng = np.random.default_rng(11)
        cube = geo.unit_cube((0, 0, 0), 1.0)
        halves = [geo.HalfSpace(random_unit_vector(rng), rng.uniform(-0.2, 0.3)) for _ in range(3)]
        poly = cube
        for h in halves:
            poly = geo.clip(poly, h)
            assert poly is not None
        exact = geo.volume(poly)
        est, se = box_fraction_mc(halfspace_indicator(halves), [-0.5] * 3, [0.5] * 3, 10_000_000, seed=12)
        assert abs(exact - est) <= 4.0 * se

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(13)
        cube = geo.unit_cube((0, 0, 0), 1.0)
        poly = geo.clip(cube, geo.HalfSpace(random_unit_vector(rng), 0.1))
        v0 = geo.volume(poly)
        for _ in range(10):
            q = geo.rotation_xyz(*rng.uniform(0, 2 * np.pi, size=3))
            shifted = geo.ConvexPolytope(
                poly.vertices @ q.T + rng.normal(size=3),
                poly.face_index.copy(),
                poly.face_start.copy(),
            )
            assert abs(geo.volume(shifted) - v0) <= 1e-10 * max(1.0, v0)


class TestMonteCarloAgreementBatch:
    """Plane and ellipsoid clip volumes against the sampling oracle."""

    def test_plane_family_cases(self):
        rng = np.random.default_rng(21)
        cube = geo.unit_cube((0, 0, 0), 1.0)
        checked = 0
        case = 0
        while checked < 60:
            case += 1
            k = rng.integers(1, 4)
            halves = [geo.HalfSpace(random_unit_vector(rng), rng.uniform(-0.3, 0.4)) for _ in range(k)]
            poly = cube
            for h in halves:
                if poly is not None:
                    poly = geo.clip(poly, h)
            exact = geo.volume(poly)
            est, se = box_fraction_mc(
                halfspace_indicator(halves), [-0.5] * 3, [0.5] * 3, 1_000_000, seed=1000 + case
            )
            assert abs(exact - est) <= 4.0 * se + 1e-9, f"case {case}: {exact} vs {est} (se {se})"
            checked += 1

    def test_ellipsoid_cases(self):
        rng = np.random.default_rng(22)
        for case in range(40):
            center = rng.uniform(-0.8, 0.8, size=3)
            axes = rng.uniform(0.3, 1.2, size=3)
            ell = geo.Ellipsoid(center, axes)
            poly = geo.ellipsoid_polytope(ell, 4000)
            lo = center - rng.uniform(0.2, 0.9, size=3)
            hi = lo + rng.uniform(0.5, 1.5, size=3)
            clipped = poly
            eye = np.eye(3)
            for ax in range(3):
                if clipped is not None:
                    clipped = geo.clip(clipped, geo.HalfSpace(eye[ax], hi[ax]))
                if clipped is not None:
                    clipped = geo.clip(clipped, geo.HalfSpace(-eye[ax], -lo[ax]))
            exact = geo.volume(clipped)
            box_vol = float(np.prod(hi - lo))
            est, se = box_fraction_mc(ell.contains, lo, hi, 1_000_000, seed=2000 + case)
            # coarser 4000-vertex polytope: allow a larger inscribed-bias term
            assert abs(exact / box_vol - est) <= 4.0 * se + 2e-3, f"case {case}"


class TestFibonacciSphere:
    def test_points_on_unit_sphere(self):
        pts = geo.fibonacci_sphere(1500)
        assert pts.shape == (1500, 3)
        assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) <= 1e-14

    def test_quasi_uniform_spacing(self):
        pts = geo.fibonacci_sphere(10000)
        dist, _ = cKDTree(pts).query(pts, k=2)
        nearest = dist[:, 1]
        assert nearest.max() / nearest.min() < 3.0

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            geo.fibonacci_sphere(1)


class TestSpherePoint:
    def test_pole(self):
        assert np.allclose(geo.sphere_point(0.0, 1.0), [0.0, 0.0, 1.0])

    def test_equator(self):
        assert np.allclose(geo.sphere_point(np.pi / 2.0, 0.0), [0.0, 1.0, 0.0], atol=1e-15)

    def test_uniform_means(self):
        # rank-1 lattice in the angle, stratified heights: a low-discrepancy set
        n = 1_000_000
        i = np.arange(n)
        az = 2.0 * np.pi * ((i / geo.GOLDEN_RATIO) % 1.0)
        hz = 2.0 * (i + 0.5) / n - 1.0
        r = np.sqrt(1.0 - hz * hz)
        pts = np.stack([r * np.cos(az), r * np.sin(az), hz], axis=1)
        assert np.all(np.abs(pts.mean(axis=0)) < 3e-3)


class TestRotation:
    def test_identity(self):
        assert np.allclose(geo.rotation_xyz(0, 0, 0), np.eye(3))

    def test_quarter_turn_about_x(self):
        r = geo.rotation_xyz(np.pi / 2.0, 0.0, 0.0)
        assert np.allclose(r @ np.array([0.0, 1.0, 0.0]), [0.0, 0.0, 1.0], atol=1e-15)

    def test_orthogonal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            r = geo.rotation_xyz(*rng.uniform(0, 2 * np.pi, size=3))
            assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-12
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestEllipsoidPolytope:
    def test_unit_sphere_volume(self):
        poly = geo.ellipsoid_polytope(geo.Ellipsoid(np.zeros(3), np.ones(3)), 10000)
        assert geo.volume(poly) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-3)

    def test_stretched_axis_volume(self):
        poly = geo.ellipsoid_polytope(geo.Ellipsoid(np.zeros(3), np.array([2.0, 1.0, 1.0])), 10000)
        assert geo.volume(poly) == pytest.approx(2.0 * 4.0 * np.pi / 3.0, rel=1e-3)

    def test_vertices_on_surface(self):
        ell = geo.Ellipsoid(np.array([0.2, -0.1, 0.4]), np.array([1.1, 0.6, 0.9]))
        poly = geo.ellipsoid_polytope(ell, 5000)
        q = (poly.vertices - ell.center) / ell.semi_axes
        assert np.max(np.abs(np.einsum("ij,ij->i", q, q) - 1.0)) <= 1e-12

    def test_transformed_polytope_keeps_volume(self):
        poly = geo.ellipsoid_polytope(geo.Ellipsoid(np.zeros(3), np.array([1.0, 0.5, 0.7])), 3000)
        v0 = geo.volume(poly)
        refl = np.diag([-1.0, 1.0, 1.0])
        out = poly.transformed(refl)
        geo.validate(out, tol=1e-7)
        assert geo.volume(out) == pytest.approx(v0, rel=1e-12)
