import numpy as np
import pytest

from togpipe.errors import NonPositiveDepth
from togpipe.geometry import (
    CameraIntrinsics,
    Pixel,
    Point3,
    RigidTransform,
    UnitVector3,
    backproject,
    load_intrinsics,
    project,
    rotate_direction_inverse,
    rotation_about_z,
    rotation_from_axis_angle,
    save_intrinsics,
    transform_point,
)


class TestProject:
    def test_principal_axis(self, K):
        px = project(K, Point3(0, 0, 1))
        assert (px.u, px.v) == (320, 240)

    def test_offset_point(self, K):
        px = project(K, Point3(0.1, 0, 1))
        assert px.u == pytest.approx(370)
        assert px.v == pytest.approx(240)

    def test_closed_form(self, K):
        px = project(K, Point3(0.2, -0.1, 2))
        assert px.u == pytest.approx(370)
        assert px.v == pytest.approx(215)

    def test_nonpositive_depth(self, K):
        with pytest.raises(NonPositiveDepth):
            project(K, Point3(0, 0, 0))
        with pytest.raises(NonPositiveDepth):
            project(K, Point3(0, 0, -1))


class TestBackproject:
    def test_principal_point(self, K):
        p = backproject(K, Pixel(320, 240), 2.0)
        assert (p.x, p.y, p.z) == (0, 0, 2)

    def test_inverse_of_project(self, K):
        p = backproject(K, Pixel(370, 240), 1.0)
        assert p.x == pytest.approx(0.1)
        assert p.y == pytest.approx(0)
        assert p.z == pytest.approx(1)

    def test_round_trip_random(self, K):
        rng = np.random.default_rng(0)
        for _ in range(100):
            px = Pixel(rng.uniform(0, 639), rng.uniform(0, 479))
            d = rng.uniform(0.1, 5.0)
            back = project(K, backproject(K, px, d))
            assert abs(back.u - px.u) < 1e-9
            assert abs(back.v - px.v) < 1e-9

    def test_nonpositive_depth(self, K):
        with pytest.raises(NonPositiveDepth):
            backproject(K, Pixel(0, 0), 0.0)


class TestRigidTransform:
    def test_identity(self):
        T = RigidTransform.identity()
        p = Point3(1.2, -0.5, 3.0)
        q = transform_point(T, p)
        assert np.allclose(q.to_array(), p.to_array())

    def test_translation_only(self):
        T = RigidTransform(np.eye(3), [1, 0, 0])
        q = transform_point(T, Point3(0, 0, 0))
        assert (q.x, q.y, q.z) == (1, 0, 0)

    def test_rz90(self):
        T = RigidTransform(rotation_about_z(np.pi / 2), np.zeros(3))
        q = transform_point(T, Point3(1, 0, 0))
        assert np.allclose(q.to_array(), [0, 1, 0], atol=1e-12)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2, np.zeros(3))
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1, 1, -1]), np.zeros(3))

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            axis = rng.normal(size=3)
            T = RigidTransform(
                rotation_from_axis_angle(axis, rng.uniform(0, np.pi)),
                rng.normal(size=3),
            )
            p = Point3.from_array(rng.normal(size=3))
            back = transform_point(T.inverse(), transform_point(T, p))
            assert np.allclose(back.to_array(), p.to_array(), atol=1e-9)


class TestDirectionTransfer:
    def test_identity(self):
        v = rotate_direction_inverse(RigidTransform.identity(), UnitVector3(0, 0, 1))
        assert np.allclose(v.to_array(), [0, 0, 1])

    def test_rz90(self):
        T = RigidTransform(rotation_about_z(np.pi / 2), np.zeros(3))
        v = rotate_direction_inverse(T, UnitVector3(1, 0, 0))
        assert np.allclose(v.to_array(), [0, -1, 0], atol=1e-12)

    def test_unit_norm_and_angle_preservation(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            T = RigidTransform(
                rotation_from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)),
                rng.normal(size=3),
            )
            v1 = UnitVector3.from_array(rng.normal(size=3))
            v2 = UnitVector3.from_array(rng.normal(size=3))
            w1 = rotate_direction_inverse(T, v1)
            w2 = rotate_direction_inverse(T, v2)
            assert abs(np.linalg.norm(w1.to_array()) - 1) < 1e-9
            a_before = np.arccos(np.clip(v1.to_array() @ v2.to_array(), -1, 1))
            a_after = np.arccos(np.clip(w1.to_array() @ w2.to_array(), -1, 1))
            assert abs(a_before - a_after) < 1e-9


class TestIntrinsicsFile:
    def test_round_trip(self, K, tmp_path):
        path = tmp_path / "intr.txt"
        save_intrinsics(K, path)
        assert load_intrinsics(path) == K

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("fx=500\nfy=500\n")
        with pytest.raises(ValueError):
            load_intrinsics(path)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)
