import numpy as np
import pytest

from corrfield.errors import DataError, NotWatertightError
from corrfield.geometry import Pose
from corrfield.mesh import (SymmetrySet, TriangleMesh, closest_surface_points,
                            diameter, discretize_symmetry, load_ply, make_box,
                            make_cylinder, make_house, make_icosphere,
                            ray_parity_inside, rotation_about_axis,
                            sample_surface, save_ply, signed_distance,
                            signed_distance_along_ray)

from oracles import brute_force_unsigned_distance, parity_inside


class TestMeshValidation:
    def test_all_primitives_watertight(self, cube100, house, icosphere60, cylinder):
        for mesh in (cube100, house, icosphere60, cylinder):
            assert mesh.is_watertight

    def test_bad_indices(self):
        with pytest.raises(DataError):
            TriangleMesh(np.zeros((3, 3)), [[0, 1, 5]])

    def test_zero_area_face(self):
        verts = [[0, 0, 0], [1, 0, 0], [2, 0, 0]]
        with pytest.raises(DataError):
            TriangleMesh(verts, [[0, 1, 2]])

    def test_open_mesh_not_watertight(self):
        verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
        mesh = TriangleMesh(verts, [[0, 1, 2]])
        assert not mesh.is_watertight
        with pytest.raises(NotWatertightError):
            signed_distance([0.0, 0, 1], mesh)


class TestSignedDistance:
    def test_cube_center(self, cube100):
        assert signed_distance([0.0, 0, 0], cube100) == pytest.approx(-50.0)

    def test_cube_outside_axis(self, cube100):
        assert signed_distance([100.0, 0, 0], cube100) == pytest.approx(50.0)

    def test_matches_brute_force_and_parity(self, cube100, icosphere60, house, rng):
        for mesh in (cube100, icosphere60, house):
            pts = rng.uniform(-90, 90, size=(250, 3))
            sd = signed_distance(pts, mesh)
            ref = brute_force_unsigned_distance(pts, mesh)
            assert np.abs(np.abs(sd) - ref).max() < 1e-9
            inside = parity_inside(pts, mesh)
            on_surface = ref < 1e-12
            assert np.array_equal((sd < 0) | on_surface, inside | on_surface)

    def test_lipschitz(self, house, rng):
        p = rng.uniform(-120, 120, size=(300, 3))
        q = p + rng.normal(0, 5, size=p.shape)
        sp = signed_distance(p, house)
        sq = signed_distance(q, house)
        gap = np.linalg.norm(p - q, axis=1)
        assert np.all(np.abs(sp - sq) <= gap + 1e-9)

    def test_closest_points_on_surface(self, icosphere60, rng):
        pts = rng.uniform(-100, 100, size=(100, 3))
        dist, cp = closest_surface_points(pts, icosphere60)
        assert np.abs(np.linalg.norm(pts - cp, axis=1) - dist).max() < 1e-9
        assert np.abs(signed_distance(cp, icosphere60)).max() < 1e-6


class TestAlongRay:
    def test_through_sphere_center(self, icosphere60):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        cam_pt = np.array([0.0, 0.0, 1000.0])
        from corrfield.config import DEFAULT_CAMERA
        sd = signed_distance_along_ray(cam_pt, pose, DEFAULT_CAMERA, icosphere60)
        # icosphere chords make the effective radius slightly below 60
        assert -60.0 < sd < -58.0

    def test_miss_is_inf(self, icosphere60, cam):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        sd = signed_distance_along_ray(np.array([500.0, 0, 1000.0]), pose, cam,
                                       icosphere60)
        assert np.isinf(sd) and sd > 0

    def test_offset_before_near_hit(self, icosphere60, cam):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        # near intersection along the optical axis at z = 1000 - r_eff;
        # compute r_eff from the mesh itself, then step 10 mm closer
        hit = signed_distance_along_ray(np.array([0.0, 0, 999.0]), pose, cam,
                                        icosphere60)
        z_near_hit = 999.0 + hit  # hit < 0: inside, near surface is behind
        probe = np.array([0.0, 0.0, z_near_hit - 10.0])
        sd = signed_distance_along_ray(probe, pose, cam, icosphere60)
        assert sd == pytest.approx(10.0, abs=1e-6)


class TestDiameter:
    def test_cube_space_diagonal(self, cube100):
        assert diameter(cube100) == pytest.approx(100 * np.sqrt(3))

    def test_two_point(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [7.0, 0, 0]]),
                            np.zeros((0, 3), dtype=int))
        assert diameter(mesh) == pytest.approx(7.0)

    def test_icosphere(self, icosphere60):
        assert diameter(icosphere60) == pytest.approx(120.0, rel=0.01)


class TestSymmetry:
    def test_single_step_is_identity(self):
        s = discretize_symmetry([0, 0, 1], 1)
        assert len(s) == 1
        assert np.allclose(s.transforms[0].R, np.eye(3))

    def test_four_fold_angles(self):
        s = discretize_symmetry([0, 0, 1], 4)
        assert len(s) == 4
        for k, pose in enumerate(s.transforms):
            expected = rotation_about_axis([0, 0, 1], np.pi / 2 * k)
            assert np.abs(pose.R - expected).max() < 1e-12

    def test_cylinder_36_step_self_map(self, cylinder):
        s = discretize_symmetry([0, 0, 1], 36)
        assert s.max_surface_deviation(cylinder, samples=400, seed=3) < 0.5

    def test_identity_always_present(self):
        quarter = Pose(rotation_about_axis([0, 0, 1], np.pi / 2), np.zeros(3))
        s = SymmetrySet((quarter,))
        assert any(np.allclose(p.R, np.eye(3)) for p in s)

    def test_json_axis_steps(self):
        s = SymmetrySet.from_json({"axis": [0, 0, 1], "steps": 4})
        assert len(s) == 4
        round_tripped = SymmetrySet.from_json(s.to_json())
        assert len(round_tripped) == 4


class TestPly:
    def test_roundtrip(self, house, tmp_path):
        path = tmp_path / "house.ply"
        save_ply(house, path)
        loaded = load_ply(path)
        assert np.allclose(loaded.vertices, house.vertices)
        assert np.array_equal(loaded.faces, house.faces)
        assert np.abs(loaded.vertex_colors - house.vertex_colors).max() <= 0.5 / 255

    def test_empty_mesh(self, tmp_path):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        path = tmp_path / "empty.ply"
        save_ply(empty, path)
        loaded = load_ply(path)
        assert len(loaded.vertices) == 0 and len(loaded.faces) == 0

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply\n")
        with pytest.raises(DataError):
            load_ply(path)


class TestSampling:
    def test_surface_samples_lie_on_surface(self, house, rng):
        pts = sample_surface(house, 500, rng)
        assert np.abs(signed_distance(pts, house)).max() < 1e-9

    def test_parity_matches_simple_shapes(self, cube100, rng):
        pts = rng.uniform(-80, 80, size=(200, 3))
        inside = ray_parity_inside(pts, cube100)
        expected = np.all(np.abs(pts) < 50.0, axis=1)
        boundary = np.any(np.abs(np.abs(pts) - 50.0) < 1e-9, axis=1)
        assert np.array_equal(inside[~boundary], expected[~boundary])
