"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Exposure-time trajectory model: each blurry image is the mean of n virtual sharp images rendered along a
pose path linearly interpolated in the Lie algebra between the pose at shutter open and the pose at
shutter close.

"""
import logging

import numpy as np

from blurba import ConfigError, assert_range
from blurba.lie import Pose, realize, interpolate, pose_gradient, twist_gradient_from_rays
from blurba.renderer import as_field_pair, generate_rays, render_pixel, render_pixel_backward, render_rays, \
    render_rays_backward, render_image
from blurba.utils import parallel_map

LOGGER = logging.getLogger(__name__)


class BlurConfig:
    """\
    Number of virtual sharp images averaged into each blurry image.

    """
    def __init__(self, n_virtual=7):
        self.n_virtual = n_virtual

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        if self.n_virtual is None or int(self.n_virtual) != self.n_virtual or self.n_virtual < 2:
            raise ConfigError(f"n_virtual must be an integer >= 2, got {self.n_virtual}. "
                              f"Express a static capture as identical start and end poses instead.")
        return self

    def to_json(self):
        """Serializes this config to JSON primitives"""
        return {'n_virtual': self.n_virtual}

    @staticmethod
    def from_json(obj):
        """Parses a BlurConfig from JSON primitives"""
        return BlurConfig(**obj)


class TrajectorySegment:
    """\
    Camera motion during one exposure, parameterized by two twists in fixed charts around initial poses:
    ``T_start = exp(xi_start) @ start_init`` and ``T_end = exp(xi_end) @ end_init``.

    """
    def __init__(self, start_init, end_init, xi_start=None, xi_end=None):
        self.start_init = start_init
        self.end_init = end_init
        self.xi_start = np.zeros(6) if xi_start is None else np.array(xi_start, dtype=np.float64)
        self.xi_end = np.zeros(6) if xi_end is None else np.array(xi_end, dtype=np.float64)

    @staticmethod
    def static(pose):
        """A segment with no motion during the exposure"""
        return TrajectorySegment(pose, pose)

    @property
    def pose_start(self):
        """Realized pose at shutter open"""
        return realize(self.xi_start, self.start_init)

    @property
    def pose_end(self):
        """Realized pose at shutter close"""
        return realize(self.xi_end, self.end_init)

    def pose_at(self, u):
        """Realized pose at normalized exposure time u in [0, 1]"""
        return interpolate(self.pose_start, self.pose_end, u)

    @property
    def pose_mid(self):
        """Realized mid-exposure pose"""
        return self.pose_at(0.5)

    @property
    def twists(self):
        """Both twists as one 12-vector, start first"""
        return np.concatenate([self.xi_start, self.xi_end])

    def with_twists(self, twists):
        """Returns a segment with the same charts and new twists, given as a 12-vector"""
        twists = np.asarray(twists, dtype=np.float64)
        return TrajectorySegment(self.start_init, self.end_init, twists[:6], twists[6:])

    def reversed(self):
        """The same motion traversed backwards"""
        return TrajectorySegment(self.end_init, self.start_init, self.xi_end, self.xi_start)

    def to_json(self):
        """Serializes this segment, including its realized start, mid and end poses"""
        return {'start_init': self.start_init.to_json(),
                'end_init': self.end_init.to_json(),
                'xi_start': self.xi_start.tolist(),
                'xi_end': self.xi_end.tolist(),
                'pose_start': self.pose_start.to_json(),
                'pose_mid': self.pose_mid.to_json(),
                'pose_end': self.pose_end.to_json()}

    @staticmethod
    def from_json(obj):
        """Parses a segment from JSON. Realized poses are derived, and ignored when reading."""
        return TrajectorySegment(Pose.from_json(obj['start_init']), Pose.from_json(obj['end_init']),
                                 obj['xi_start'], obj['xi_end'])

    def __repr__(self):
        return f"TrajectorySegment(start={self.pose_start!r}, end={self.pose_end!r})"


def virtual_fractions(n):
    """Normalized exposure times i / (n - 1) of the n virtual images"""
    assert_range("n", n, min_val=2)
    return [i / (n - 1) for i in range(n)]


def virtual_poses(seg, n):
    """\
    Interpolates the n virtual camera poses of an exposure.

    :param seg: TrajectorySegment
    :param n: number of virtual images, >= 2
    :return: list of n Poses. The first and last are the realized endpoints.

    """
    pose_start, pose_end = seg.pose_start, seg.pose_end
    if pose_start == pose_end:
        return [pose_start] * n

    poses = [interpolate(pose_start, pose_end, u) for u in virtual_fractions(n)]
    poses[-1] = pose_end
    return poses


def _virtual_seed(seed, idx):
    return None if seed is None else tuple(np.atleast_1d(seed)) + (idx, )


def _add(total, grad):
    if grad is None:
        return total
    vector = grad.as_vector()
    return vector if total is None else total + vector


def _to_params(fields, vectors):
    return tuple(None if vec is None else field.with_vector(vec)
                 for field, vec in zip(as_field_pair(fields), vectors))


# pylint: disable=too-many-arguments
def synthesize_blurry_pixel(fields, intrinsics, seg, pixel, blur, sampling, seed=None):
    """\
    Synthesizes one blurry pixel as the mean of its n virtual sharp renders.

    :param fields: field or (coarse, fine) pair
    :param intrinsics: CameraIntrinsics
    :param seg: TrajectorySegment
    :param pixel: (x, y) pixel coordinates
    :param blur: BlurConfig
    :param sampling: SamplingConfig
    :param seed: None for deterministic depth sampling. Otherwise a tuple of seed keys, extended with the \
    virtual index so that every virtual image draws its own depths.
    :return: rgb 3-vector

    """
    blur.validate()
    poses = virtual_poses(seg, blur.n_virtual)
    if seed is None and all(pose == poses[0] for pose in poses):
        return render_pixel(fields, intrinsics, poses[0], pixel, sampling)

    total = np.zeros(3)
    for idx, pose in enumerate(poses):
        total = total + render_pixel(fields, intrinsics, pose, pixel, sampling, seed=_virtual_seed(seed, idx))
    return total / blur.n_virtual


# pylint: disable=too-many-locals
def synthesize_blurry_pixel_backward(fields, intrinsics, seg, pixel, blur, sampling, upstream, seed=None):
    """\
    Gradients of a scalar loss w.r.t. field parameters and both endpoint twists, given the gradient w.r.t.
    the synthesized blurry pixel.

    :return: tuple of ((grad_coarse, grad_fine), grad_xi_start, grad_xi_end)

    """
    blur.validate()
    upstream = np.asarray(upstream, dtype=np.float64) / blur.n_virtual
    poses = virtual_poses(seg, blur.n_virtual)

    param_vectors = [None, None]
    grad_start, grad_end = np.zeros(6), np.zeros(6)
    for idx, (pose, u) in enumerate(zip(poses, virtual_fractions(blur.n_virtual))):
        param_grads, twist = render_pixel_backward(fields, intrinsics, pose, pixel, sampling, upstream,
                                                   seed=_virtual_seed(seed, idx))
        param_vectors = [_add(total, grad) for total, grad in zip(param_vectors, param_grads)]
        g_start, g_end = pose_gradient(seg.xi_start, seg.xi_end, u, twist, seg.start_init, seg.end_init)
        grad_start += g_start
        grad_end += g_end

    return _to_params(fields, param_vectors), grad_start, grad_end


class BlurResult:
    """\
    Output of synthesize_blurry(): blurry colors of each pass plus the virtual renders for the backward pass.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, segments, image_ids, pixels, renders, rgb_coarse, rgb_fine):
        self.segments = segments
        self.image_ids = image_ids
        self.pixels = pixels
        self.renders = renders
        self.rgb_coarse = rgb_coarse
        self.rgb_fine = rgb_fine

    @property
    def rgb(self):
        """Final blurry color: fine pass if present, coarse otherwise"""
        return self.rgb_fine if self.rgb_fine is not None else self.rgb_coarse

    @property
    def n_virtual(self):
        """Number of virtual images"""
        return len(self.renders)


def _virtual_rays(intrinsics, segments, image_ids, pixels, poses_by_image, idx):
    origins = np.empty((len(pixels), 3))
    dirs = np.empty((len(pixels), 3))
    for image_id in np.unique(image_ids):
        mask = image_ids == image_id
        origins[mask], dirs[mask] = generate_rays(intrinsics, poses_by_image[image_id][idx], pixels[mask])
    return origins, dirs


# pylint: disable=too-many-arguments
def synthesize_blurry(fields, intrinsics, segments, image_ids, pixels, blur, sampling, seed=None, threads=1):
    """\
    Synthesizes blurry colors for a batch of pixels drawn from many images.

    :param fields: field or (coarse, fine) pair
    :param intrinsics: CameraIntrinsics shared by all images
    :param segments: list of TrajectorySegment, indexed by image id
    :param image_ids: integer array (N,) of the image each pixel belongs to
    :param pixels: array (N, 2) of (x, y) pixel coordinates
    :param blur: BlurConfig
    :param sampling: SamplingConfig
    :param seed: None for deterministic depth sampling, or seed keys. Virtual image i of image k draws \
    depths from the stream keyed by ``seed + (i, k)``.
    :param threads: virtual images rendered in parallel. Results are reduced in virtual-index order.
    :return: BlurResult

    """
    blur.validate()
    image_ids = np.asarray(image_ids, dtype=np.int64)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    poses_by_image = {int(k): virtual_poses(segments[int(k)], blur.n_virtual) for k in np.unique(image_ids)}

    def _render_virtual(idx):
        origins, dirs = _virtual_rays(intrinsics, segments, image_ids, pixels, poses_by_image, idx)
        return render_rays(fields, origins, dirs, sampling, seed=_virtual_seed(seed, idx), groups=image_ids)

    renders = parallel_map(_render_virtual, range(blur.n_virtual), threads=threads)

    # Static exposures with deterministic sampling render n identical images: their mean is the first one.
    static = np.zeros(len(pixels), dtype=bool)
    if seed is None:
        for image_id, poses in poses_by_image.items():
            if poses[0] == poses[-1]:
                static[image_ids == image_id] = True

    rgb_coarse = _mean_colors([render.rgb_coarse for render in renders], static)
    rgb_fine = None
    if renders[0].rgb_fine is not None:
        rgb_fine = _mean_colors([render.rgb_fine for render in renders], static)

    return BlurResult(segments, image_ids, pixels, renders, rgb_coarse, rgb_fine)


def _mean_colors(colors, static):
    total = colors[0].copy()
    for rgb in colors[1:]:
        total += rgb
    total /= len(colors)
    total[static] = colors[0][static]
    return total


def synthesize_blurry_backward(fields, result, sampling, grad_coarse=None, grad_fine=None, threads=1):
    """\
    Back-propagates gradients w.r.t. the blurry colors of synthesize_blurry() to field parameters and to the
    twists of every segment touched by the batch.

    :param fields: the fields passed to synthesize_blurry()
    :param result: BlurResult
    :param sampling: SamplingConfig
    :param grad_coarse: gradient w.r.t. result.rgb_coarse (N, 3), or None
    :param grad_fine: gradient w.r.t. result.rgb_fine (N, 3), or None
    :param threads: virtual images processed in parallel. Results are reduced in virtual-index order.
    :return: tuple of ((grad_coarse_params, grad_fine_params), {image id: 12-vector twist gradient})

    """
    n = result.n_virtual
    grad_coarse = None if grad_coarse is None else np.asarray(grad_coarse, dtype=np.float64) / n
    grad_fine = None if grad_fine is None else np.asarray(grad_fine, dtype=np.float64) / n
    fractions = virtual_fractions(n)
    image_ids = np.unique(result.image_ids)

    def _backward_virtual(idx):
        render = result.renders[idx]
        g_coarse, g_fine, g_o, g_d = render_rays_backward(render, sampling, grad_coarse, grad_fine)
        twists = {}
        for image_id in image_ids:
            mask = result.image_ids == image_id
            seg = result.segments[int(image_id)]
            twist = twist_gradient_from_rays(render.origins[mask], render.directions[mask], g_o[mask], g_d[mask])
            g_start, g_end = pose_gradient(seg.xi_start, seg.xi_end, fractions[idx], twist,
                                           seg.start_init, seg.end_init)
            twists[int(image_id)] = np.concatenate([g_start, g_end])
        return g_coarse, g_fine, twists

    partials = parallel_map(_backward_virtual, range(n), threads=threads)

    param_vectors = [None, None]
    pose_grads = {int(image_id): np.zeros(12) for image_id in image_ids}
    for g_coarse, g_fine, twists in partials:
        param_vectors = [_add(param_vectors[0], g_coarse), _add(param_vectors[1], g_fine)]
        for image_id, grad in twists.items():
            pose_grads[image_id] += grad

    return _to_params(fields, param_vectors), pose_grads


def render_virtual_sequence(fields, intrinsics, seg, n, sampling, threads=1):
    """\
    Renders all n virtual sharp images of one exposure, recovering the latent sharp sequence.

    :param fields: field or (coarse, fine) pair
    :param intrinsics: CameraIntrinsics
    :param seg: TrajectorySegment
    :param n: number of virtual images, >= 2
    :param sampling: SamplingConfig
    :param threads: worker threads for each image
    :return: list of n images (H, W, 3)

    """
    return [render_image(fields, intrinsics, pose, sampling, threads=threads) for pose in virtual_poses(seg, n)]
