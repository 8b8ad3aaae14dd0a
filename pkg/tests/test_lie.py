"""\
Copyright (c) 2026, blurba developers
All rights reserved.

"""
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from blurba import AngleNearPiError
from blurba.lie import Pose, hat, vee, so3_exp, so3_log, se3_exp, se3_log, se3_left_jacobian, \
    se3_left_jacobian_inverse, adjoint, compose, inverse, interpolate, realize, pose_distance, pose_gradient, \
    twist_gradient_from_points, MAX_LOG_ANGLE
from tests.gradcheck import numerical_gradient, relative_error


def random_twist(rng, max_angle=np.pi - 1e-3, trans_scale=2.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return np.concatenate([rng.uniform(-trans_scale, trans_scale, size=3), axis * angle])


def random_pose(rng, max_angle=1.5):
    return se3_exp(random_twist(rng, max_angle=max_angle))


def matrix_distance(a, b):
    return float(np.max(np.abs(a.to_matrix() - b.to_matrix())))


class TestPose(unittest.TestCase):
    def test_identity_and_json(self):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        self.assertEqual(Pose.from_json(pose.to_json()), pose)
        self.assertEqual(Pose.identity(), Pose(np.eye(3), np.zeros(3)))
        self.assertEqual(len(pose.to_json()), 4)
        self.assertEqual(pose.to_json()[3], [0.0, 0.0, 0.0, 1.0])

    def test_immutable(self):
        pose = Pose.identity()
        with self.assertRaises(AttributeError):
            pose.rotation = np.eye(3)
        with self.assertRaises(ValueError):
            pose.translation[0] = 1.0

    def test_apply_and_compose(self):
        rng = np.random.default_rng(1)
        a, b = random_pose(rng), random_pose(rng)
        points = rng.normal(size=(4, 3))
        np.testing.assert_allclose((a @ b).apply(points), a.apply(b.apply(points)), atol=1e-12)
        np.testing.assert_allclose(compose(a, inverse(a)).to_matrix(), np.eye(4), atol=1e-12)

    def test_look_at(self):
        eye, target = np.array([2.0, 0.5, 1.0]), np.array([0.0, 0.1, -0.2])
        pose = Pose.look_at(eye, target)
        forward = (target - eye) / np.linalg.norm(target - eye)
        np.testing.assert_allclose(pose.rotation[:, 2], forward, atol=1e-12)
        np.testing.assert_allclose(pose.translation, eye)
        self.assertAlmostEqual(np.linalg.det(pose.rotation), 1.0, places=12)
        # +y of the camera (image down) points against world up
        self.assertLess(pose.rotation[2, 1], 0)

    def test_distance(self):
        rng = np.random.default_rng(2)
        pose = random_pose(rng)
        self.assertEqual(pose_distance(pose, pose), 0.0)
        self.assertGreater(pose_distance(pose, Pose.identity()), 0.0)


class TestExpLog(unittest.TestCase):
    def test_hat_vee(self):
        v = np.array([0.3, -1.2, 2.5])
        np.testing.assert_array_equal(vee(hat(v)), v)
        np.testing.assert_allclose(hat(v) @ np.array([1.0, 2.0, 3.0]), np.cross(v, [1.0, 2.0, 3.0]))

    def test_exp_of_zero(self):
        self.assertEqual(se3_exp(np.zeros(6)), Pose.identity())
        np.testing.assert_array_equal(se3_log(Pose.identity()), np.zeros(6))

    def test_roundtrip_1000_twists(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            xi = random_twist(rng)
            np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 3, elements=st.floats(-1.0, 1.0)),
           st.floats(0.0, np.pi - 1e-3),
           arrays(np.float64, 3, elements=st.floats(-3.0, 3.0)))
    def test_roundtrip_property(self, axis, angle, rho):
        norm = np.linalg.norm(axis)
        phi = axis / norm * angle if norm > 1e-3 else np.zeros(3)
        xi = np.concatenate([rho, phi])
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    def test_matches_scipy_rotations(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            phi = random_twist(rng)[3:]
            np.testing.assert_allclose(so3_exp(phi), Rotation.from_rotvec(phi).as_matrix(), atol=1e-12)
            np.testing.assert_allclose(so3_log(Rotation.from_rotvec(phi).as_matrix()), phi, atol=1e-9)

    def test_small_angles(self):
        for angle in [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 1e-2]:
            phi = np.array([0.6, -0.8, 0.0]) * angle
            np.testing.assert_allclose(so3_exp(phi), Rotation.from_rotvec(phi).as_matrix(), atol=1e-15)
            np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-15)

    def test_angle_near_pi(self):
        phi = np.array([0.0, 0.0, 1.0]) * (np.pi - 1e-7)
        with self.assertRaises(AngleNearPiError):
            so3_log(so3_exp(phi))
        with self.assertRaises(AngleNearPiError):
            se3_log(se3_exp(np.concatenate([np.ones(3), phi])))
        with self.assertRaises(AngleNearPiError):
            interpolate(Pose.identity(), se3_exp(np.concatenate([np.zeros(3), phi])), 0.5)

        # just below the threshold still works
        phi_ok = np.array([1.0, 0.0, 0.0]) * (MAX_LOG_ANGLE - 1e-4)
        np.testing.assert_allclose(so3_log(so3_exp(phi_ok)), phi_ok, atol=1e-8)


class TestJacobians(unittest.TestCase):
    def _numerical_left_jacobian(self, xi, step=1e-6):
        base_inv = inverse(se3_exp(xi))
        cols = []
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = step
            plus = se3_log(compose(se3_exp(xi + delta), base_inv))
            minus = se3_log(compose(se3_exp(xi - delta), base_inv))
            cols.append((plus - minus) / (2 * step))
        return np.stack(cols, axis=1)

    def test_left_jacobian(self):
        rng = np.random.default_rng(5)
        twists = [random_twist(rng, max_angle=2.5) for _ in range(10)]
        twists += [np.concatenate([rng.normal(size=3), np.array([0.0, 0.6, 0.8]) * angle])
                   for angle in (0.0, 1e-5, 5e-3, 2e-2)]
        for xi in twists:
            np.testing.assert_allclose(se3_left_jacobian(xi), self._numerical_left_jacobian(xi), atol=1e-6)

    def test_left_jacobian_inverse(self):
        rng = np.random.default_rng(6)
        for angle in (0.0, 1e-6, 5e-3, 0.5, 2.0, 3.0):
            xi = np.concatenate([rng.normal(size=3), rng.normal(size=3)])
            xi[3:] *= angle / max(np.linalg.norm(xi[3:]), 1e-12)
            np.testing.assert_allclose(se3_left_jacobian(xi) @ se3_left_jacobian_inverse(xi), np.eye(6),
                                       atol=1e-10)

    def test_adjoint(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            pose, xi = random_pose(rng), random_twist(rng, max_angle=2.0)
            conjugated = compose(pose, compose(se3_exp(xi), inverse(pose)))
            np.testing.assert_allclose(conjugated.to_matrix(), se3_exp(adjoint(pose) @ xi).to_matrix(), atol=1e-9)


class TestInterpolation(unittest.TestCase):
    def test_endpoints(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            start, end = random_pose(rng), random_pose(rng)
            try:
                mid = interpolate(start, end, 0.5)
            except AngleNearPiError:
                continue
            self.assertIs(interpolate(start, end, 0.0), start)
            self.assertLess(matrix_distance(interpolate(start, end, 1.0), end), 1e-9)
            self.assertLess(matrix_distance(interpolate(end, start, 0.5), mid), 1e-9)

    def test_identical_endpoints(self):
        pose = random_pose(np.random.default_rng(9))
        for u in (0.0, 0.25, 1.0):
            self.assertIs(interpolate(pose, pose, u), pose)

    def test_pure_translation(self):
        start, end = Pose.identity(), Pose(np.eye(3), [1.0, 0.0, 0.0])
        for i in range(7):
            pose = interpolate(start, end, i / 6)
            np.testing.assert_allclose(pose.translation, [i / 6, 0.0, 0.0], atol=1e-12)
            np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)

    def test_rotation_subgroup(self):
        axis = np.array([0.0, 0.6, 0.8])
        for a, b in [(0.1, 1.2), (-0.5, 2.0), (2.5, -0.3)]:
            start = Pose(so3_exp(axis * a), np.zeros(3))
            end = Pose(so3_exp(axis * b), np.zeros(3))
            for u in np.linspace(0, 1, 5):
                pose = interpolate(start, end, u)
                np.testing.assert_allclose(pose.rotation, so3_exp(axis * (a + u * (b - a))), atol=1e-9)
                np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-9)

    def test_subgroup_consistency(self):
        """Interpolating between two points of a segment stays on that segment"""
        rng = np.random.default_rng(11)
        for _ in range(100):
            start = random_pose(rng)
            end = compose(start, se3_exp(random_twist(rng, max_angle=2.5)))
            u, w, s = rng.uniform(0.0, 1.0, size=3)
            pose = interpolate(interpolate(start, end, u), interpolate(start, end, w), s)
            self.assertLess(matrix_distance(pose, interpolate(start, end, u + s * (w - u))), 1e-9)

    def test_pose_gradient_finite_differences(self):
        rng = np.random.default_rng(10)
        points = rng.normal(size=(5, 3))
        weights = rng.normal(size=(5, 3))

        for trial in range(100):
            start_init = random_pose(rng, max_angle=1.0)
            end_init = compose(se3_exp(random_twist(rng, max_angle=1.0, trans_scale=0.5)), start_init)
            xi_start = 0.1 * rng.normal(size=6)
            xi_end = 0.1 * rng.normal(size=6)
            u = [0.0, 0.3, 0.5, 0.8, 1.0][trial % 5]

            def loss(xs, xe):
                pose = interpolate(realize(xs, start_init), realize(xe, end_init), u)
                return float(np.sum(weights * pose.apply(points)))

            pose = interpolate(realize(xi_start, start_init), realize(xi_end, end_init), u)
            upstream = twist_gradient_from_points(pose.apply(points), weights)
            grad_start, grad_end = pose_gradient(xi_start, xi_end, u, upstream, start_init, end_init)

            num_start = numerical_gradient(lambda xs: loss(xs, xi_end), xi_start)
            num_end = numerical_gradient(lambda xe: loss(xi_start, xe), xi_end)
            self.assertLess(relative_error(grad_start, num_start), 1e-6)
            self.assertLess(relative_error(grad_end, num_end), 1e-6)

    def test_pose_gradient_at_start_ignores_end(self):
        rng = np.random.default_rng(11)
        upstream = rng.normal(size=6)
        grad_start, grad_end = pose_gradient(rng.normal(size=6) * 0.1, rng.normal(size=6) * 0.1, 0.0, upstream)
        np.testing.assert_array_equal(grad_end, np.zeros(6))
        self.assertGreater(np.linalg.norm(grad_start), 0)

    def test_twist_gradient_from_points(self):
        rng = np.random.default_rng(12)
        pose = random_pose(rng)
        points = rng.normal(size=(6, 3))
        weights = rng.normal(size=(6, 3))

        def loss(delta):
            return float(np.sum(weights * compose(se3_exp(delta), pose).apply(points)))

        analytic = twist_gradient_from_points(pose.apply(points), weights)
        self.assertLess(relative_error(analytic, numerical_gradient(loss, np.zeros(6))), 1e-7)


if __name__ == "__main__":
    unittest.main()
