import numpy as np
import pytest

from src.errors import AmbiguousRotation, BehindCamera, InvalidDepth, ConfigError
from src.geom import (
    CameraIntrinsics, Pose, adjoint, boxminus, compose, exp_map, inverse, log_map, project,
    project_many, random_pose_offset, rotation_angle, unproject, warp, warp_jacobian,
    warp_jacobian_many, warp_many,
)


def random_twist(rng, max_angle=np.pi - 0.05, max_trans=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return np.concatenate([rng.uniform(-max_trans, max_trans, 3), axis * rng.uniform(0.0, max_angle)])


EXAMPLE_K = CameraIntrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)


class TestExpLog:
    def test_zero_twist_is_identity(self):
        p = exp_map(np.zeros(6))
        np.testing.assert_array_equal(p.rotation, np.eye(3))
        np.testing.assert_array_equal(p.translation, np.zeros(3))

    def test_quarter_turn_about_x(self):
        p = exp_map([0, 0, 0, np.pi / 2, 0, 0])
        expected = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
        np.testing.assert_allclose(p.rotation, expected, atol=1e-12)
        np.testing.assert_allclose(p.translation, 0.0, atol=1e-12)

    def test_roundtrip_random(self, rng):
        for _ in range(1000):
            t = random_twist(rng)
            np.testing.assert_allclose(log_map(exp_map(t)), t, atol=1e-9)

    def test_roundtrip_small_angles(self, rng):
        for scale in (1e-2, 1e-4, 1e-7, 1e-10):
            t = np.concatenate([rng.normal(size=3), rng.normal(size=3) * scale])
            np.testing.assert_allclose(log_map(exp_map(t)), t, atol=1e-12)

    def test_identity_log(self):
        np.testing.assert_array_equal(log_map(Pose.identity()), np.zeros(6))

    def test_translation_only(self):
        np.testing.assert_allclose(log_map(Pose.from_translation([1, 2, 3])), [1, 2, 3, 0, 0, 0])

    def test_rotation_near_pi_is_ambiguous(self):
        p = exp_map([0, 0, 0, 0, 0, np.pi - 1e-8])
        with pytest.raises(AmbiguousRotation):
            log_map(p)

    def test_rotations_are_proper(self, rng):
        for _ in range(100):
            r = exp_map(random_twist(rng)).rotation
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestComposeInverse:
    def test_compose_identity(self, rng):
        p = exp_map(random_twist(rng))
        q = compose(p, Pose.identity())
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-15)

    def test_compose_with_inverse(self, rng):
        p = exp_map(random_twist(rng))
        np.testing.assert_allclose(compose(p, inverse(p)).matrix(), np.eye(4), atol=1e-9)

    def test_frame_pose_from_render_pose(self):
        # render pose identity, frame-from-render translation (1,0,0) -> frame pose (-1,0,0)
        rel = Pose.from_translation([1.0, 0.0, 0.0])
        frame_pose = compose(Pose.identity(), inverse(rel))
        np.testing.assert_allclose(frame_pose.translation, [-1.0, 0.0, 0.0])

    def test_matmul_matches_compose(self, rng):
        a, b = exp_map(random_twist(rng)), exp_map(random_twist(rng))
        np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)

    def test_adjoint_moves_twists(self, rng):
        p = exp_map(random_twist(rng))
        xi = random_twist(rng, max_angle=0.5)
        lhs = compose(compose(p, exp_map(xi)), inverse(p))
        np.testing.assert_allclose(lhs.matrix(), exp_map(adjoint(p) @ xi).matrix(), atol=1e-9)


class TestBoxminus:
    def test_self_is_zero(self, rng):
        p = exp_map(random_twist(rng))
        np.testing.assert_allclose(boxminus(p, p), np.zeros(6), atol=1e-12)

    def test_recovers_twist(self, rng):
        for _ in range(100):
            b = exp_map(random_twist(rng))
            t = random_twist(rng, max_angle=2.0)
            np.testing.assert_allclose(boxminus(compose(b, exp_map(t)), b), t, atol=1e-9)

    def test_pure_translations(self):
        d = boxminus(Pose.from_translation([2, 0, 0]), Pose.from_translation([1, 0, 0]))
        np.testing.assert_allclose(d, [1, 0, 0, 0, 0, 0])


class TestQuaternion:
    def test_roundtrip(self, rng):
        p = exp_map(random_twist(rng))
        q = p.quaternion()
        assert q[3] >= 0.0
        back = Pose.from_quaternion(p.translation, q)
        np.testing.assert_allclose(back.rotation, p.rotation, atol=1e-12)

    def test_normalizes_on_load(self):
        p = Pose.from_quaternion([0, 0, 0], [0, 0, 0, 2.0])
        np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-15)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Pose.from_quaternion([0, 0, 0], [0, 0, 0, 0])


class TestProjection:
    def test_optical_axis(self):
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)
        np.testing.assert_allclose(project(k, [0, 0, 1]), [0, 0])

    def test_hand_evaluated(self):
        np.testing.assert_allclose(project(EXAMPLE_K, [2, 4, 2]), [420, 440])

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project(EXAMPLE_K, [0, 0, 0.05])
        with pytest.raises(BehindCamera):
            project(EXAMPLE_K, [0, 0, -3])

    def test_unproject_principal_point(self):
        np.testing.assert_allclose(unproject(EXAMPLE_K, [320, 240], 5.0), [0, 0, 5])

    def test_unproject_inverts_project(self):
        np.testing.assert_allclose(unproject(EXAMPLE_K, [420, 440], 2.0), [2, 4, 2])

    def test_zero_depth(self):
        with pytest.raises(InvalidDepth):
            unproject(EXAMPLE_K, [1, 1], 0.0)

    def test_batched_mask(self):
        uv, valid = project_many(EXAMPLE_K, [[0, 0, 1], [0, 0, 0.1], [1, 1, -1]])
        assert valid.tolist() == [True, False, False]

    def test_invalid_intrinsics(self):
        with pytest.raises(ConfigError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)


class TestLevelIntrinsics:
    def test_mean_convention_matches_block_centers(self):
        k = CameraIntrinsics(100.0, 100.0, 319.5, 239.5, 640, 480)
        half = k.downscaled_mean()
        # coarse pixel (0, 0) covers fine pixels 0 and 1, centered at 0.5
        assert half.cx == pytest.approx((319.5 - 0.5) / 2.0)
        assert (half.width, half.height) == (320, 240)

    def test_top_left_convention(self):
        k = CameraIntrinsics(100.0, 100.0, 319.5, 239.5, 640, 480)
        half = k.downscaled_top_left()
        assert half.cx == pytest.approx(319.5 / 2.0)
        assert half.fx == pytest.approx(50.0)

    def test_at_level(self):
        k = CameraIntrinsics(64.0, 64.0, 31.5, 31.5, 64, 64)
        assert k.at_level(5).width == 2
        assert k.at_level(3, top_left=True).fx == pytest.approx(8.0)


class TestWarp:
    def test_identity(self, rng):
        for _ in range(20):
            px = rng.uniform([160, 120], [480, 360])
            np.testing.assert_allclose(warp(EXAMPLE_K, Pose.identity(), px, rng.uniform(1, 50)), px, atol=1e-9)

    def test_forward_motion_keeps_principal_point(self):
        rel = Pose.from_translation([0, 0, -1.0])
        np.testing.assert_allclose(warp(EXAMPLE_K, rel, [320, 240], 10.0), [320, 240], atol=1e-12)

    def test_matches_composition(self, rng):
        for _ in range(100):
            rel = exp_map(random_twist(rng, max_angle=0.2, max_trans=0.5))
            px = rng.uniform([160, 120], [480, 360])
            d = rng.uniform(2.0, 30.0)
            expected = project(EXAMPLE_K, rel.apply(unproject(EXAMPLE_K, px, d)))
            np.testing.assert_allclose(warp(EXAMPLE_K, rel, px, d), expected, atol=1e-9)

    def test_target_intrinsics(self):
        k_target = EXAMPLE_K.downscaled_mean()
        uv, valid, _ = warp_many(EXAMPLE_K, Pose.identity(), [[320, 240]], [4.0], k_target)
        assert valid[0]
        np.testing.assert_allclose(uv[0], [k_target.cx, k_target.cy])


class TestWarpJacobian:
    def test_finite_differences(self, rng):
        h = 1e-6
        for _ in range(1000):
            rel = exp_map(random_twist(rng, max_angle=0.2, max_trans=0.5))
            px = rng.uniform([160, 120], [480, 360])
            d = rng.uniform(2.0, 30.0)
            jac = warp_jacobian(EXAMPLE_K, rel, px, d)
            fd = np.zeros((2, 6))
            for i in range(6):
                e = np.zeros(6)
                e[i] = h
                plus = warp(EXAMPLE_K, compose(exp_map(e), rel), px, d)
                minus = warp(EXAMPLE_K, compose(exp_map(-e), rel), px, d)
                fd[:, i] = (plus - minus) / (2 * h)
            scale = max(np.abs(fd).max(), 1.0)
            assert np.abs(jac - fd).max() / scale < 1e-4

    def test_x_translation_column(self):
        jac = warp_jacobian(EXAMPLE_K, Pose.identity(), [420, 440], 2.0)
        np.testing.assert_allclose(jac[:, 0], [100.0 / 2.0, 0.0])

    def test_optical_axis_rotation_at_principal_point(self):
        jac = warp_jacobian(EXAMPLE_K, Pose.identity(), [320, 240], 7.0)
        np.testing.assert_allclose(jac[:, 5], [0.0, 0.0], atol=1e-12)

    def test_batched_matches_single(self, rng):
        rel = exp_map(random_twist(rng, max_angle=0.1, max_trans=0.2))
        px = rng.uniform([0, 0], [640, 480], size=(5, 2))
        d = rng.uniform(3, 20, size=5)
        batched, valid = warp_jacobian_many(EXAMPLE_K, rel, px, d)
        assert valid.all()
        for i in range(5):
            np.testing.assert_allclose(batched[i], warp_jacobian(EXAMPLE_K, rel, px[i], d[i]))


class TestRandomOffset:
    def test_bounds(self, rng):
        for _ in range(200):
            p = random_pose_offset(2.0, 10.0, rng)
            assert np.linalg.norm(p.translation) <= 2.0 + 1e-12
            assert np.rad2deg(rotation_angle(p.rotation)) <= 10.0 + 1e-9

    def test_seeded(self):
        a = random_pose_offset(5.0, 15.0, np.random.default_rng(3))
        b = random_pose_offset(5.0, 15.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a.matrix(), b.matrix())
