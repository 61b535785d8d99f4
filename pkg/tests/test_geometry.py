"""Pose, camera and box primitives, checked against hand computations
and independent matrix/pinhole oracles."""

import math

import numpy as np
import pytest

from dynamap.errors import GeometryError, InvalidDepthError
from dynamap.geometry import (
    PLANES,
    Box2D,
    Box3D,
    CameraIntrinsics,
    Detection2D,
    Plane,
    PoseSE3,
    backproject,
    compose,
    inverse,
    iou_2d,
    iou_3d,
    lift_detection,
    project_to_plane,
    rot_y,
    rot_z,
    transform_box,
)
from conftest import random_pose

TUM_K = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, depth_scale=5000.0)


class TestPose:
    def test_compose_identity(self):
        i = PoseSE3.identity()
        out = compose(i, i)
        np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-12)

    def test_compose_with_inverse_is_identity(self, rng):
        for _ in range(20):
            p = random_pose(rng)
            np.testing.assert_allclose(compose(p, inverse(p)).matrix(),
                                       np.eye(4), atol=1e-9)

    def test_compose_translations_by_hand(self):
        # Oracle: 4x4 homogeneous matrix product.
        a = PoseSE3.from_translation([1, 0, 0])
        b = PoseSE3.from_translation([0, 2, 0])
        expected = a.matrix() @ b.matrix()
        np.testing.assert_allclose(compose(a, b).matrix(), expected, atol=1e-15)
        np.testing.assert_allclose(compose(a, b).translation, [1, 2, 0])

    def test_compose_matches_matrix_product(self, rng):
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            np.testing.assert_allclose(compose(a, b).matrix(),
                                       a.matrix() @ b.matrix(), atol=1e-12)

    def test_compose_applies_b_then_a(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        x = rng.uniform(-1, 1, 3)
        np.testing.assert_allclose(compose(a, b).apply(x), a.apply(b.apply(x)),
                                   atol=1e-12)

    def test_inverse_identity(self):
        np.testing.assert_allclose(inverse(PoseSE3.identity()).matrix(),
                                   np.eye(4), atol=1e-15)

    def test_inverse_pure_translation_negates(self):
        inv = inverse(PoseSE3.from_translation([1, 2, 3]))
        np.testing.assert_allclose(inv.translation, [-1, -2, -3])

    def test_inverse_rotation_is_transpose(self):
        p = PoseSE3(rot_z(math.pi / 2), np.zeros(3))
        expected = rot_z(-math.pi / 2)
        np.testing.assert_allclose(inverse(p).rotation, expected, atol=1e-12)

    def test_compose_compose_inverse_recovers(self, rng):
        for _ in range(30):
            p, q = random_pose(rng), random_pose(rng)
            back = compose(compose(p, q), inverse(q))
            np.testing.assert_allclose(back.matrix(), p.matrix(), atol=1e-8)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(GeometryError):
            PoseSE3(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(GeometryError):
            PoseSE3(r, np.zeros(3))

    def test_immutable_arrays(self):
        p = PoseSE3.identity()
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 2.0


class TestBoxes:
    def test_box3d_normalizes_corners(self):
        b = Box3D([1, 5, 2], [0, 3, 9])
        np.testing.assert_allclose(b.p1, [0, 3, 2])
        np.testing.assert_allclose(b.p2, [1, 5, 9])

    def test_box2d_rejects_unordered(self):
        with pytest.raises(GeometryError):
            Box2D((1.0, 0.0), (0.0, 1.0))

    def test_transform_box_identity(self):
        b = Box3D([0, 0, 0], [1, 1, 1], label=3, track_id=7)
        out = transform_box(PoseSE3.identity(), b)
        np.testing.assert_allclose(out.p1, b.p1)
        np.testing.assert_allclose(out.p2, b.p2)
        assert out.label == 3 and out.track_id == 7

    def test_transform_box_translation(self):
        out = transform_box(PoseSE3.from_translation([0, 0, 1]),
                            Box3D([0, 0, 0], [1, 1, 1]))
        np.testing.assert_allclose(out.p1, [0, 0, 1])
        np.testing.assert_allclose(out.p2, [1, 1, 2])

    def test_transform_box_rotation_renormalizes(self):
        # rot_z(90): (x,y,z) -> (-y, x, z); corners (0,0,0) and (1,2,0)
        # map to (0,0,0) and (-2,1,0); normalized box is [(-2,0,0),(0,1,0)].
        pose = PoseSE3(rot_z(math.pi / 2), np.zeros(3))
        out = transform_box(pose, Box3D([0, 0, 0], [1, 2, 0]))
        np.testing.assert_allclose(out.p1, [-2, 0, 0], atol=1e-12)
        np.testing.assert_allclose(out.p2, [0, 1, 0], atol=1e-12)

    def test_transform_box_corner_transport(self, rng):
        # Corners of the output are the normalization of the transported
        # input corners.
        for _ in range(10):
            pose = random_pose(rng)
            b = Box3D(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
            out = transform_box(pose, b)
            q1, q2 = pose.apply(b.p1), pose.apply(b.p2)
            np.testing.assert_allclose(out.p1, np.minimum(q1, q2), atol=1e-12)
            np.testing.assert_allclose(out.p2, np.maximum(q1, q2), atol=1e-12)

    def test_contains_inclusive(self):
        b = Box3D([0, 0, 0], [1, 1, 1])
        assert b.contains([0, 0, 0]) and b.contains([1, 1, 1])
        assert b.contains([0.5, 1.0, 0.3])
        assert not b.contains([1.0000001, 0.5, 0.5])


class TestBackproject:
    def test_principal_point(self):
        out = backproject(TUM_K.cx, TUM_K.cy, TUM_K.depth_scale * 2, TUM_K)
        np.testing.assert_allclose(out, [0, 0, 2], atol=1e-12)

    def test_unit_tangent(self):
        out = backproject(TUM_K.cx + TUM_K.fx, TUM_K.cy, TUM_K.depth_scale, TUM_K)
        np.testing.assert_allclose(out, [1, 0, 1], atol=1e-12)

    def test_tum_defaults_worked_example(self):
        # z = 5000 / 5000 = 1 m, x = (419.5 - 319.5) * 1 / 525 = 100/525.
        out = backproject(419.5, 239.5, 5000, TUM_K)
        np.testing.assert_allclose(out, [100.0 / 525.0, 0.0, 1.0], atol=1e-15)

    def test_invalid_depth(self):
        with pytest.raises(InvalidDepthError):
            backproject(100, 100, 0, TUM_K)
        with pytest.raises(InvalidDepthError):
            backproject(100, 100, -3, TUM_K)

    def test_reprojection_roundtrip(self, rng):
        for _ in range(200):
            u = rng.uniform(0, 640)
            v = rng.uniform(0, 480)
            d = rng.uniform(1, 60000)
            p = backproject(u, v, d, TUM_K)
            u2 = TUM_K.fx * p[0] / p[2] + TUM_K.cx
            v2 = TUM_K.fy * p[1] / p[2] + TUM_K.cy
            assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6


class TestLiftDetection:
    def _det(self, box, depth, label=14):
        return Detection2D(label=label, score=0.9,
                           box=Box2D.from_corners(*box), center_depth=depth)

    def test_identity_pose_equals_camera_frame(self):
        d = self._det(((0, 0), (639, 479)), 1.0)
        out = lift_detection(d, PoseSE3.identity(), TUM_K)
        c1 = backproject(0, 0, TUM_K.depth_scale, TUM_K)
        c2 = backproject(639, 479, TUM_K.depth_scale, TUM_K)
        np.testing.assert_allclose(out.p1, np.minimum(c1, c2), atol=1e-12)
        np.testing.assert_allclose(out.p2, np.maximum(c1, c2), atol=1e-12)
        assert out.label == 14

    def test_pure_translation_shifts_box(self):
        d = self._det(((100, 100), (200, 200)), 2.0)
        base = lift_detection(d, PoseSE3.identity(), TUM_K)
        # pose_cw translating by t means the camera sits at -t in world.
        moved = lift_detection(d, PoseSE3.from_translation([0.5, -0.25, 1.0]), TUM_K)
        np.testing.assert_allclose(moved.p1, base.p1 - [0.5, -0.25, 1.0], atol=1e-12)
        np.testing.assert_allclose(moved.p2, base.p2 - [0.5, -0.25, 1.0], atol=1e-12)

    def test_rotated_pose_against_two_step_oracle(self):
        # Oracle: backproject both corners, then transform_box by the
        # camera-to-world pose.
        pose_cw = PoseSE3(rot_y(math.pi / 2), np.array([0.3, -0.1, 2.0]))
        d = self._det(((150, 120), (260, 300)), 1.7)
        out = lift_detection(d, pose_cw, TUM_K)
        c1 = backproject(150, 120, 1.7 * TUM_K.depth_scale, TUM_K)
        c2 = backproject(260, 300, 1.7 * TUM_K.depth_scale, TUM_K)
        oracle = transform_box(inverse(pose_cw), Box3D(c1, c2))
        np.testing.assert_allclose(out.p1, oracle.p1, atol=1e-9)
        np.testing.assert_allclose(out.p2, oracle.p2, atol=1e-9)

    def test_invalid_depth_propagates(self):
        with pytest.raises(InvalidDepthError):
            lift_detection(self._det(((0, 0), (10, 10)), 0.0),
                           PoseSE3.identity(), TUM_K)


class TestPlaneProjection:
    def test_fixed_axis_orderings(self):
        b = Box3D([0, 0, 0], [1, 2, 3])
        assert project_to_plane(b, Plane.XOY) == Box2D((0, 0), (1, 2))
        assert project_to_plane(b, Plane.YOZ) == Box2D((0, 0), (2, 3))
        # zOx uses (z, x) ordering.
        assert project_to_plane(b, Plane.ZOX) == Box2D((0, 0), (3, 1))

    def test_each_plane_drops_one_axis(self):
        dropped = {p.missing_axis for p in PLANES}
        assert dropped == {0, 1, 2}

    def test_area_product_equals_volume_squared(self, rng):
        for _ in range(50):
            b = Box3D(rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3))
            prod = 1.0
            for p in PLANES:
                prod *= project_to_plane(b, p).area
            assert prod == pytest.approx(b.volume ** 2, rel=1e-9, abs=1e-12)


class TestIou:
    def test_identical_boxes(self):
        b = Box2D((0, 0), (2, 3))
        assert iou_2d(b, b) == 1.0

    def test_disjoint(self):
        assert iou_2d(Box2D((0, 0), (1, 1)), Box2D((5, 5), (6, 6))) == 0.0

    def test_half_shifted_unit_squares(self):
        # overlap 0.5, union 1.5 -> exactly 1/3
        v = iou_2d(Box2D((0, 0), (1, 1)), Box2D((0.5, 0), (1.5, 1)))
        assert v == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_degenerate_is_zero(self):
        line = Box2D((0, 0), (0, 1))
        assert iou_2d(line, line) == 0.0
        assert iou_2d(line, Box2D((0, 0), (1, 1))) == 0.0

    def test_symmetric_and_bounded(self, rng):
        for _ in range(200):
            a = Box2D.from_corners(rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
            b = Box2D.from_corners(rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
            v = iou_2d(a, b)
            assert v == iou_2d(b, a)
            assert 0.0 <= v <= 1.0

    def test_one_only_for_identical(self, rng):
        a = Box2D((0, 0), (1, 1))
        b = Box2D((0, 0), (1, 1.000001))
        assert iou_2d(a, b) < 1.0

    def test_iou_3d_basics(self):
        a = Box3D([0, 0, 0], [1, 1, 1])
        assert iou_3d(a, a) == 1.0
        assert iou_3d(a, Box3D([2, 2, 2], [3, 3, 3])) == 0.0
        # half-overlap in x: inter 0.5, union 1.5
        b = Box3D([0.5, 0, 0], [1.5, 1, 1])
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)
