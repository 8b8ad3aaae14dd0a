"""\
Copyright (c) 2026, blurba developers
All rights reserved.

"""
import unittest

import numpy as np

from blurba import ConfigError
from blurba.blur_model import BlurConfig, TrajectorySegment, virtual_fractions, virtual_poses, \
    synthesize_blurry_pixel, synthesize_blurry_pixel_backward, synthesize_blurry, synthesize_blurry_backward, \
    render_virtual_sequence
from blurba.field import EncodingConfig, FieldConfig, FieldParams
from blurba.lie import Pose, compose, interpolate, pose_gradient, realize, se3_exp
from blurba.renderer import CameraIntrinsics, SamplingConfig, generate_rays, render_image, render_pixel, \
    render_pixel_backward, render_rays
from tests.gradcheck import numerical_gradient, relative_error

INTRINSICS = CameraIntrinsics.from_fov(8, 6, 45.0)
DETERMINISTIC = SamplingConfig(n_coarse=12, n_fine=0, use_fine=False, stratified=False)


def tiny_field(seed=0):
    config = FieldConfig(depth=2, width=8, hidden_activation="softplus", color_width=4,
                         encoding=EncodingConfig(l_pos=2, l_dir=1), seed=seed)
    return FieldParams.initialize(config)


def moving_segment(rng, scale=0.1):
    start = compose(se3_exp(0.05 * rng.normal(size=6)), Pose.look_at([2.0, 0.3, 0.5], [0.0, 0.0, 0.0]))
    end = compose(se3_exp(scale * rng.normal(size=6)), start)
    return TrajectorySegment(start, end, 0.02 * rng.normal(size=6), 0.02 * rng.normal(size=6))


class TestSegments(unittest.TestCase):
    def test_config(self):
        self.assertEqual(BlurConfig().validate().n_virtual, 7)
        for bad in (1, 0, -3, 2.5, None):
            with self.assertRaises(ConfigError):
                BlurConfig(bad).validate()

        seg = TrajectorySegment.static(Pose.identity())
        with self.assertRaises(ConfigError):
            synthesize_blurry_pixel(tiny_field(), INTRINSICS, seg, (4.0, 3.0), BlurConfig(1), DETERMINISTIC)

    def test_fractions(self):
        self.assertEqual(virtual_fractions(2), [0.0, 1.0])
        self.assertEqual(virtual_fractions(5), [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_two_virtual_images(self):
        seg = moving_segment(np.random.default_rng(0))
        poses = virtual_poses(seg, 2)
        self.assertEqual(poses[0], seg.pose_start)
        self.assertEqual(poses[1], seg.pose_end)

    def test_pure_translation(self):
        seg = TrajectorySegment(Pose.identity(), Pose(np.eye(3), [0.7, -0.2, 0.0]))
        for i, pose in enumerate(virtual_poses(seg, 7)):
            np.testing.assert_allclose(pose.translation, np.array([0.7, -0.2, 0.0]) * i / 6, atol=1e-12)
            np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)

    def test_json(self):
        seg = moving_segment(np.random.default_rng(1))
        obj = seg.to_json()
        self.assertEqual(set(obj), {'start_init', 'end_init', 'xi_start', 'xi_end', 'pose_start', 'pose_mid',
                                    'pose_end'})
        parsed = TrajectorySegment.from_json(obj)
        np.testing.assert_array_equal(parsed.twists, seg.twists)
        self.assertEqual(parsed.pose_end, seg.pose_end)

    def test_with_twists(self):
        seg = moving_segment(np.random.default_rng(2))
        twists = np.arange(12) * 0.01
        updated = seg.with_twists(twists)
        np.testing.assert_array_equal(updated.twists, twists)
        self.assertIs(updated.start_init, seg.start_init)
        self.assertEqual(seg.reversed().pose_start, seg.pose_end)


class TestSynthesis(unittest.TestCase):
    def test_static_matches_sharp_render(self):
        field = tiny_field(1)
        pose = Pose.look_at([2.0, 0.3, 0.5], [0.0, 0.0, 0.0])
        seg = TrajectorySegment.static(pose)
        for pixel in [(0.5, 0.5), (4.0, 3.0), (7.5, 5.5)]:
            np.testing.assert_array_equal(synthesize_blurry_pixel(field, INTRINSICS, seg, pixel, BlurConfig(),
                                                                  DETERMINISTIC),
                                          render_pixel(field, INTRINSICS, pose, pixel, DETERMINISTIC))

    def test_matches_brute_force_average(self):
        rng = np.random.default_rng(3)
        field = tiny_field(2)
        for n in (2, 4, 7):
            seg = moving_segment(rng)
            pixel = rng.uniform(0, 6, size=2)
            expected = np.mean([render_pixel(field, INTRINSICS, seg.pose_at(u), pixel, DETERMINISTIC)
                                for u in virtual_fractions(n)], axis=0)
            actual = synthesize_blurry_pixel(field, INTRINSICS, seg, pixel, BlurConfig(n), DETERMINISTIC)
            np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_reversal_symmetry(self):
        rng = np.random.default_rng(4)
        field = tiny_field(3)
        seg, pixel, upstream = moving_segment(rng), (3.3, 2.1), rng.normal(size=3)
        blur = BlurConfig(5)

        np.testing.assert_allclose(synthesize_blurry_pixel(field, INTRINSICS, seg, pixel, blur, DETERMINISTIC),
                                   synthesize_blurry_pixel(field, INTRINSICS, seg.reversed(), pixel, blur,
                                                           DETERMINISTIC), atol=1e-12)

        _, g_start, g_end = synthesize_blurry_pixel_backward(field, INTRINSICS, seg, pixel, blur, DETERMINISTIC,
                                                             upstream)
        _, r_start, r_end = synthesize_blurry_pixel_backward(field, INTRINSICS, seg.reversed(), pixel, blur,
                                                             DETERMINISTIC, upstream)
        np.testing.assert_allclose(g_start, r_end, atol=1e-9)
        np.testing.assert_allclose(g_end, r_start, atol=1e-9)

    def test_pixel_gradients(self):
        """Gradients w.r.t. both twists and field parameters match central differences"""
        blur = BlurConfig(4)
        for trial in range(5):
            rng = np.random.default_rng(20 + trial)
            field = tiny_field(10 + trial)
            seg = moving_segment(rng)
            pixel = rng.uniform(1.0, 5.0, size=2)
            upstream = rng.normal(size=3)

            (grad_params, grad_fine), g_start, g_end = synthesize_blurry_pixel_backward(
                field, INTRINSICS, seg, pixel, blur, DETERMINISTIC, upstream)
            self.assertIsNone(grad_fine)

            def loss_twists(twists):
                return float(upstream @ synthesize_blurry_pixel(field, INTRINSICS, seg.with_twists(twists), pixel,
                                                                blur, DETERMINISTIC))

            def loss_params(vec):
                return float(upstream @ synthesize_blurry_pixel(field.with_vector(vec), INTRINSICS, seg, pixel,
                                                                blur, DETERMINISTIC))

            numeric = numerical_gradient(loss_twists, seg.twists)
            self.assertLess(relative_error(np.concatenate([g_start, g_end]), numeric), 1e-4)
            self.assertLess(relative_error(grad_params.as_vector(),
                                           numerical_gradient(loss_params, field.as_vector())), 1e-4)

    def test_two_virtual_images_route_end_gradient_through_last_image(self):
        rng = np.random.default_rng(7)
        field = tiny_field(7)
        seg, pixel, upstream = moving_segment(rng), (4.2, 2.7), rng.normal(size=3)
        _, _, g_end = synthesize_blurry_pixel_backward(field, INTRINSICS, seg, pixel, BlurConfig(2), DETERMINISTIC,
                                                       upstream)

        def last_image_only(xi_end):
            pose = realize(xi_end, seg.end_init)
            return 0.5 * float(upstream @ render_pixel(field, INTRINSICS, pose, pixel, DETERMINISTIC))

        self.assertGreater(np.linalg.norm(g_end), 0)
        self.assertLess(relative_error(g_end, numerical_gradient(last_image_only, seg.xi_end)), 1e-4)

    def test_mid_image_gradient_splits_between_endpoints(self):
        """The mid-exposure pose gradient, split over both endpoints, equals moving both endpoints rigidly"""
        rng = np.random.default_rng(8)
        field = tiny_field(8)
        moving = moving_segment(rng)
        seg = TrajectorySegment(moving.pose_start, moving.pose_end)
        pixel, upstream = (3.6, 2.4), rng.normal(size=3)
        u = virtual_fractions(7)[3]

        _, twist = render_pixel_backward(field, INTRINSICS, seg.pose_at(u), pixel, DETERMINISTIC, upstream)
        g_start, g_end = pose_gradient(seg.xi_start, seg.xi_end, u, twist, seg.start_init, seg.end_init)
        self.assertGreater(np.linalg.norm(g_start), 0)
        self.assertGreater(np.linalg.norm(g_end), 0)

        def rigid(delta):
            pose = interpolate(realize(delta, seg.start_init), realize(delta, seg.end_init), u)
            return float(upstream @ render_pixel(field, INTRINSICS, pose, pixel, DETERMINISTIC))

        def at_mid(delta):
            pose = compose(se3_exp(delta), seg.pose_at(u))
            return float(upstream @ render_pixel(field, INTRINSICS, pose, pixel, DETERMINISTIC))

        numeric = numerical_gradient(rigid, np.zeros(6))
        self.assertLess(relative_error(numeric, numerical_gradient(at_mid, np.zeros(6))), 1e-6)
        self.assertLess(relative_error(g_start + g_end, numeric), 1e-4)

    def test_virtual_sequence(self):
        field = tiny_field(4)
        seg = moving_segment(np.random.default_rng(5))
        images = render_virtual_sequence(field, INTRINSICS, seg, 3, DETERMINISTIC)
        self.assertEqual(len(images), 3)
        np.testing.assert_array_equal(images[0], render_image(field, INTRINSICS, seg.pose_start, DETERMINISTIC))
        np.testing.assert_array_equal(images[2], render_image(field, INTRINSICS, seg.pose_end, DETERMINISTIC))


class TestBatchedSynthesis(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.fields = (tiny_field(5), tiny_field(6))
        self.sampling = SamplingConfig(n_coarse=8, n_fine=4, stratified=False)
        self.segments = [moving_segment(rng), moving_segment(rng), moving_segment(rng)]
        self.image_ids = np.array([0, 2, 2, 0, 2])
        self.pixels = rng.uniform(0, 6, size=(5, 2))
        self.upstream = rng.normal(size=(5, 3))

    def test_matches_per_pixel(self):
        blur = BlurConfig(3)
        result = synthesize_blurry(self.fields, INTRINSICS, self.segments, self.image_ids, self.pixels, blur,
                                   self.sampling)
        self.assertEqual(result.n_virtual, 3)
        for row, (image_id, pixel) in enumerate(zip(self.image_ids, self.pixels)):
            expected = synthesize_blurry_pixel(self.fields, INTRINSICS, self.segments[image_id], pixel, blur,
                                               self.sampling)
            np.testing.assert_allclose(result.rgb[row], expected, atol=1e-12)

    def test_backward_matches_per_pixel(self):
        blur = BlurConfig(3)
        result = synthesize_blurry(self.fields, INTRINSICS, self.segments, self.image_ids, self.pixels, blur,
                                   self.sampling)
        (grad_coarse, grad_fine), pose_grads = synthesize_blurry_backward(self.fields, result, self.sampling,
                                                                          grad_fine=self.upstream)
        self.assertIsNone(grad_coarse)
        self.assertEqual(set(pose_grads), {0, 2})

        expected_fine = np.zeros(self.fields[1].size())
        expected_twists = {0: np.zeros(12), 2: np.zeros(12)}
        for row, (image_id, pixel) in enumerate(zip(self.image_ids, self.pixels)):
            (_, g_fine), g_start, g_end = synthesize_blurry_pixel_backward(
                self.fields, INTRINSICS, self.segments[image_id], pixel, blur, self.sampling, self.upstream[row])
            expected_fine += g_fine.as_vector()
            expected_twists[image_id] += np.concatenate([g_start, g_end])

        np.testing.assert_allclose(grad_fine.as_vector(), expected_fine, atol=1e-10)
        for image_id, grad in expected_twists.items():
            np.testing.assert_allclose(pose_grads[image_id], grad, atol=1e-10)

    def test_static_matches_sharp_render(self):
        pose = Pose.look_at([2.0, 0.3, 0.5], [0.0, 0.0, 0.0])
        segments = [TrajectorySegment.static(pose)]
        result = synthesize_blurry(self.fields, INTRINSICS, segments, np.zeros(5, dtype=int), self.pixels,
                                   BlurConfig(7), self.sampling)
        sharp = render_rays(self.fields, *generate_rays(INTRINSICS, pose, self.pixels), self.sampling)
        np.testing.assert_array_equal(result.rgb, sharp.rgb)
        np.testing.assert_array_equal(result.rgb_coarse, sharp.rgb_coarse)

    def test_static_rows_in_mixed_batch(self):
        pose = Pose.look_at([2.0, 0.3, 0.5], [0.0, 0.0, 0.0])
        segments = [TrajectorySegment.static(pose), self.segments[1]]
        image_ids = np.array([0, 1, 0, 1, 0])
        result = synthesize_blurry(self.fields, INTRINSICS, segments, image_ids, self.pixels, BlurConfig(7),
                                   self.sampling)
        static = image_ids == 0
        np.testing.assert_array_equal(result.rgb[static], result.renders[0].rgb[static])
        for row in np.flatnonzero(~static):
            expected = synthesize_blurry_pixel(self.fields, INTRINSICS, segments[1], self.pixels[row],
                                               BlurConfig(7), self.sampling)
            np.testing.assert_allclose(result.rgb[row], expected, atol=1e-12)

    def test_thread_independence(self):
        blur = BlurConfig(4)
        results = []
        for threads in (1, 3):
            result = synthesize_blurry(self.fields, INTRINSICS, self.segments, self.image_ids, self.pixels, blur,
                                       self.sampling, seed=(9, 1), threads=threads)
            grads = synthesize_blurry_backward(self.fields, result, self.sampling, grad_fine=self.upstream,
                                               threads=threads)
            results.append((result, grads))

        (first, (first_params, first_poses)), (second, (second_params, second_poses)) = results
        np.testing.assert_array_equal(first.rgb, second.rgb)
        np.testing.assert_array_equal(first_params[1].as_vector(), second_params[1].as_vector())
        for image_id, grad in first_poses.items():
            np.testing.assert_array_equal(grad, second_poses[image_id])

    def test_virtual_images_draw_independent_depths(self):
        pose = Pose.look_at([2.0, 0.3, 0.5], [0.0, 0.0, 0.0])
        segments = [TrajectorySegment.static(pose)]
        sampling = SamplingConfig(n_coarse=8, n_fine=4, stratified=True)
        result = synthesize_blurry(self.fields, INTRINSICS, segments, np.zeros(5, dtype=int), self.pixels,
                                   BlurConfig(3), sampling, seed=(0, 0))
        first = result.renders[0].passes[0]['samples'].depths
        second = result.renders[1].passes[0]['samples'].depths
        self.assertFalse(np.array_equal(first, second))
        self.assertFalse(np.array_equal(result.renders[0].rgb, result.renders[1].rgb))


if __name__ == "__main__":
    unittest.main()
