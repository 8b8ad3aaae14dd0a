"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Differentiable volume rendering: pixel-to-ray generation, depth sampling (stratified and hierarchical),
transmittance compositing and the full backward pass to field parameters and pose twists.

"""
import logging
from collections import namedtuple

import numpy as np

from blurba import ConfigError, assert_range
from blurba.lie import twist_gradient_from_rays
from blurba.utils import make_rng, parallel_map, chunked

LOGGER = logging.getLogger(__name__)

Ray = namedtuple("Ray", ["origin", "direction", "near", "far"])
SampleSet = namedtuple("SampleSet", ["depths", "deltas", "edges"])
Composite = namedtuple("Composite", ["rgb", "weights", "opacity", "depth"])


class CameraIntrinsics:
    """\
    Pinhole camera intrinsics, in pixels.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, fx, fy, cx, cy, width, height):
        self.fx, self.fy = float(fx), float(fy)
        self.cx, self.cy = float(cx), float(cy)
        self.width, self.height = int(width), int(height)

    @staticmethod
    def from_fov(width, height, fov_degrees):
        """Creates intrinsics with square pixels and the principal point at the image center"""
        focal = 0.5 * width / np.tan(0.5 * np.radians(fov_degrees))
        return CameraIntrinsics(focal, focal, 0.5 * width, 0.5 * height, width, height)

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("Focal lengths must be positive")
        assert_range("width", self.width, min_val=1)
        assert_range("height", self.height, min_val=1)
        return self

    def matrix(self):
        """The 3x3 calibration matrix K"""
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_json(self):
        """Serializes these intrinsics to JSON primitives"""
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height}

    @staticmethod
    def from_json(obj):
        """Parses intrinsics from JSON primitives"""
        return CameraIntrinsics(obj['fx'], obj['fy'], obj['cx'], obj['cy'], obj['width'], obj['height'])

    def __eq__(self, other):
        return isinstance(other, CameraIntrinsics) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(tuple(self.to_json().values()))


class SamplingConfig:
    """\
    Depth sampling and compositing settings.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, n_coarse=32, n_fine=32, near=0.5, far=3.5, stratified=True, use_fine=True,
                 background=(0.0, 0.0, 0.0)):
        """\

        :param n_coarse: samples per ray for the coarse pass
        :param n_fine: additional hierarchical samples per ray for the fine pass
        :param near: near bound along each ray, scene units
        :param far: far bound along each ray, scene units
        :param stratified: if True, jitter samples within their bins during training. Rendering for \
        evaluation always uses bin midpoints.
        :param use_fine: if False, only the coarse network is used (single-network mode)
        :param background: constant background color
        """
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.near = near
        self.far = far
        self.stratified = stratified
        self.use_fine = use_fine
        self.background = tuple(background)

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        assert_range("n_coarse", self.n_coarse, min_val=1)
        assert_range("n_fine", self.n_fine, min_val=0)
        if not 0 < self.near < self.far:
            raise ConfigError(f"Need 0 < near < far, got near={self.near}, far={self.far}")
        if len(self.background) != 3:
            raise ConfigError("background must be an RGB triple")
        return self

    def to_json(self):
        """Serializes this config to JSON primitives"""
        return {'n_coarse': self.n_coarse, 'n_fine': self.n_fine, 'near': self.near, 'far': self.far,
                'stratified': self.stratified, 'use_fine': self.use_fine, 'background': list(self.background)}

    @staticmethod
    def from_json(obj):
        """Parses a SamplingConfig from JSON primitives"""
        return SamplingConfig(**obj)

    def copy(self, **overrides):
        """Returns a copy of this config with some fields replaced"""
        obj = self.to_json()
        obj.update(overrides)
        return SamplingConfig.from_json(obj)


def camera_directions(intrinsics, pixels):
    """\
    Unit ray directions in camera coordinates: normalize(K^-1 [x; 1]).

    :param intrinsics: CameraIntrinsics
    :param pixels: array (N, 2) of (x, y) pixel coordinates
    :return: array (N, 3)

    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    dirs = np.stack([(pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
                     (pixels[:, 1] - intrinsics.cy) / intrinsics.fy,
                     np.ones(len(pixels))], axis=-1)
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def generate_rays(intrinsics, pose, pixels):
    """\
    Generates world-space rays for a batch of pixels seen from one pose.

    :param intrinsics: CameraIntrinsics
    :param pose: camera-to-world Pose
    :param pixels: array (N, 2)
    :return: tuple of (origins (N, 3), directions (N, 3))

    """
    dirs = camera_directions(intrinsics, pixels) @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def pixel_to_ray(intrinsics, pose, pixel, near=0.5, far=3.5):
    """\
    Generates the world-space ray through a pixel.

    :param intrinsics: CameraIntrinsics
    :param pose: camera-to-world Pose
    :param pixel: (x, y) pixel coordinates
    :param near: near bound, scene units
    :param far: far bound, scene units
    :return: Ray

    """
    origins, dirs = generate_rays(intrinsics, pose, [pixel])
    return Ray(origins[0], dirs[0], near, far)


def pixel_centers(intrinsics):
    """Coordinates of all pixel centers, row-major, as an (H*W, 2) array of (x, y)"""
    ys, xs = np.meshgrid(np.arange(intrinsics.height), np.arange(intrinsics.width), indexing='ij')
    return np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=-1).astype(np.float64)


def _deltas(depths, near, far):
    """Distances between consecutive samples. The last one is capped at (far - near) / n."""
    n = depths.shape[-1]
    cap = np.broadcast_to((far - near) / n, depths.shape[:-1])[..., None]
    return np.concatenate([np.diff(depths, axis=-1), cap], axis=-1)


def draw_uniforms(n_rays, n_values, seed, groups=None):
    """\
    Draws uniform [0, 1) noise for stratified sampling. Each group of rays (e.g. one image) gets its own
    stream derived from ``seed + (group id,)``, consumed in ray order.

    :param n_rays: number of rays
    :param n_values: values per ray
    :param seed: tuple of non-negative integer keys
    :param groups: optional array (n_rays,) of non-negative group ids
    :return: array (n_rays, n_values)

    """
    seed = tuple(np.atleast_1d(seed))
    if groups is None:
        return make_rng(*seed).random((n_rays, n_values))

    groups = np.asarray(groups)
    noise = np.empty((n_rays, n_values))
    for group in np.unique(groups):
        mask = groups == group
        noise[mask] = make_rng(*seed, group).random((int(mask.sum()), n_values))
    return noise


def sample_depths(near, far, n, mode="uniform", seed=None, n_rays=1, noise=None):
    """\
    Samples depths along rays, one per uniform bin between near and far.

    :param near: near bound, scene units
    :param far: far bound, scene units
    :param n: number of samples per ray
    :param mode: "uniform" for bin midpoints, "stratified" for one uniform draw per bin
    :param seed: seed keys for stratified mode (int or tuple of ints)
    :param n_rays: number of rays
    :param noise: optional pre-drawn uniforms (n_rays, n) used instead of seed in stratified mode
    :return: SampleSet with depths, deltas (n_rays, n) and bin edges (n_rays, n + 1)

    """
    assert_range("n", n, min_val=1)
    edges = np.broadcast_to(np.linspace(near, far, n + 1), (n_rays, n + 1)).copy()
    lower, upper = edges[:, :-1], edges[:, 1:]

    if mode == "uniform":
        offsets = np.full((n_rays, n), 0.5)
    elif mode == "stratified":
        offsets = noise if noise is not None else draw_uniforms(n_rays, n, seed if seed is not None else 0)
    else:
        raise ConfigError(f"Unknown sampling mode: {mode}")

    depths = lower + (upper - lower) * offsets
    return SampleSet(depths, _deltas(depths, near, far), edges)


def hierarchical_resample(samples, weights, n_fine, near, far, noise=None):
    """\
    Draws additional depths by inverse-transform sampling the piecewise-constant PDF defined by the coarse
    weights over the coarse bins, and merges them with the coarse depths.

    :param samples: coarse SampleSet (with bin edges)
    :param weights: compositing weights of the coarse samples, array (N, S), non-negative
    :param n_fine: number of additional samples per ray
    :param near: near bound (for the last delta)
    :param far: far bound (for the last delta)
    :param noise: optional uniforms (N, n_fine). Deterministic midpoints of the CDF are used if None.
    :return: merged SampleSet, sorted ascending (edges are None)

    """
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    n_rays, n_bins = weights.shape
    total = weights.sum(axis=-1, keepdims=True)

    degenerate = total[:, 0] <= 0
    if np.any(degenerate):
        LOGGER.debug("Degenerate weights on %d rays: falling back to uniform resampling", int(degenerate.sum()))
        weights = np.where(degenerate[:, None], 1.0, weights)
        total = weights.sum(axis=-1, keepdims=True)

    pdf = weights / total
    cdf = np.concatenate([np.zeros((n_rays, 1)), np.cumsum(pdf, axis=-1)], axis=-1)
    cdf[:, -1] = 1.0

    if noise is None:
        u = np.broadcast_to((np.arange(n_fine) + 0.5) / n_fine, (n_rays, n_fine))
    else:
        u = np.asarray(noise)

    # Highest k with cdf[k] <= u: zero-mass bins are skipped because they share their upper cdf value.
    idx = np.clip((cdf[:, None, :] <= u[:, :, None]).sum(axis=-1) - 1, 0, n_bins - 1)
    cdf_lo = np.take_along_axis(cdf, idx, axis=-1)
    cdf_hi = np.take_along_axis(cdf, idx + 1, axis=-1)
    edge_lo = np.take_along_axis(samples.edges, idx, axis=-1)
    edge_hi = np.take_along_axis(samples.edges, idx + 1, axis=-1)

    frac = np.clip((u - cdf_lo) / np.where(cdf_hi > cdf_lo, cdf_hi - cdf_lo, 1.0), 0.0, 1.0)
    fine = edge_lo + frac * (edge_hi - edge_lo)

    merged = _strictly_ascending(np.sort(np.concatenate([samples.depths, fine], axis=-1), axis=-1), far)
    return SampleSet(merged, _deltas(merged, near, far), None)


def _strictly_ascending(depths, far):
    """\
    Moves every depth that ties with its predecessor halfway towards the next larger depth (or towards far),
    so that sorted depths become strictly ascending. Fine draws at coarse bin centers produce such ties.

    """
    depths = depths.copy()
    for _ in range(depths.shape[-1]):
        tied = np.zeros(depths.shape, dtype=bool)
        tied[:, 1:] = depths[:, 1:] <= depths[:, :-1]
        if not np.any(tied):
            break
        following = np.concatenate([depths[:, 1:], np.full((len(depths), 1), far)], axis=-1)
        depths = np.where(tied, 0.5 * (depths + following), depths)
    return depths


def composite(colors, sigmas, deltas, background=(0.0, 0.0, 0.0), depths=None):
    """\
    Volume rendering: ``I = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i + T_{n+1} * background`` with
    ``T_i = exp(-sum_{k<i} sigma_k delta_k)``.

    :param colors: array (..., S, 3)
    :param sigmas: array (..., S), non-negative
    :param deltas: array (..., S), positive
    :param background: background color composited behind the samples
    :param depths: optional array (..., S), used for the expected-depth debug channel
    :return: Composite(rgb, weights, opacity, depth)

    """
    colors = np.asarray(colors, dtype=np.float64)
    optical = np.asarray(sigmas, dtype=np.float64) * np.asarray(deltas, dtype=np.float64)
    accumulated = np.cumsum(optical, axis=-1)
    trans_after = np.exp(-accumulated)
    trans_before = np.exp(-(accumulated - optical))
    weights = trans_before - trans_after

    opacity = 1.0 - trans_after[..., -1]
    rgb = (weights[..., None] * colors).sum(axis=-2) + trans_after[..., -1:] * np.asarray(background)
    depth = (weights * depths).sum(axis=-1) if depths is not None else None
    return Composite(rgb, weights, opacity, depth)


def composite_backward(colors, sigmas, deltas, background, grad_rgb):
    """\
    Gradients of composite() w.r.t. colors and densities.

    :param colors: array (..., S, 3)
    :param sigmas: array (..., S)
    :param deltas: array (..., S)
    :param background: background color
    :param grad_rgb: gradient w.r.t. the composited color, array (..., 3)
    :return: tuple of (grad_colors (..., S, 3), grad_sigmas (..., S))

    """
    colors = np.asarray(colors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)

    optical = np.asarray(sigmas, dtype=np.float64) * deltas
    accumulated = np.cumsum(optical, axis=-1)
    trans_after = np.exp(-accumulated)
    weights = np.exp(-(accumulated - optical)) - trans_after

    weighted = weights[..., None] * colors
    suffix = weighted.sum(axis=-2, keepdims=True) - np.cumsum(weighted, axis=-2)  # sum over i > j
    final = trans_after[..., -1:, None] * np.asarray(background)

    d_optical = trans_after[..., None] * colors - suffix - final
    grad_sigmas = (d_optical * grad_rgb[..., None, :]).sum(axis=-1) * deltas
    grad_colors = weights[..., None] * grad_rgb[..., None, :]
    return grad_colors, grad_sigmas


def as_field_pair(fields):
    """Normalizes a single field or a (coarse, fine) pair into a (coarse, fine-or-None) tuple"""
    if isinstance(fields, (tuple, list)):
        coarse, fine = fields
        return coarse, fine
    return fields, None


class RenderResult:
    """\
    Output of render_rays(), including what's needed for render_rays_backward().

    """
    def __init__(self, origins, directions, passes, rgb, depth, opacity):
        self.origins = origins
        self.directions = directions
        self.passes = passes
        self.rgb = rgb
        self.depth = depth
        self.opacity = opacity

    @property
    def rgb_coarse(self):
        """Composited color of the coarse pass"""
        return self.passes[0]['composite'].rgb

    @property
    def rgb_fine(self):
        """Composited color of the fine pass, or None in single-network mode"""
        return self.passes[1]['composite'].rgb if len(self.passes) > 1 else None


def _render_pass(field, origins, directions, samples, background):
    points = origins[:, None, :] + directions[:, None, :] * samples.depths[..., None]
    view_dirs = np.broadcast_to(directions[:, None, :], points.shape)
    colors, sigmas, cache = field.forward(points, view_dirs)
    comp = composite(colors, sigmas, samples.deltas, background, samples.depths)
    return {'field': field, 'samples': samples, 'colors': colors, 'sigmas': sigmas,
            'cache': cache, 'composite': comp}


def render_rays(fields, origins, directions, sampling, seed=None, groups=None):
    """\
    Renders a batch of rays with the coarse (and optionally fine) network.

    :param fields: a field (FieldParams or any object with forward/backward), or a (coarse, fine) pair
    :param origins: array (N, 3)
    :param directions: array (N, 3), unit vectors
    :param sampling: SamplingConfig
    :param seed: None for deterministic midpoint sampling, or a tuple of integer keys for stratified sampling
    :param groups: optional per-ray group ids; each group draws from its own stream (see draw_uniforms)
    :return: RenderResult

    """
    coarse, fine = as_field_pair(fields)
    use_fine = fine is not None and sampling.use_fine and sampling.n_fine > 0
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n_rays = len(origins)

    noise = None
    if seed is not None and sampling.stratified:
        noise = draw_uniforms(n_rays, sampling.n_coarse + (sampling.n_fine if use_fine else 0), seed, groups)

    samples = sample_depths(sampling.near, sampling.far, sampling.n_coarse,
                            mode="stratified" if noise is not None else "uniform",
                            n_rays=n_rays, noise=noise[:, :sampling.n_coarse] if noise is not None else None)
    passes = [_render_pass(coarse, origins, directions, samples, sampling.background)]

    if use_fine:
        fine_samples = hierarchical_resample(samples, passes[0]['composite'].weights, sampling.n_fine,
                                             sampling.near, sampling.far,
                                             noise=noise[:, sampling.n_coarse:] if noise is not None else None)
        passes.append(_render_pass(fine, origins, directions, fine_samples, sampling.background))

    last = passes[-1]['composite']
    return RenderResult(origins, directions, passes, last.rgb, last.depth, last.opacity)


def _render_pass_backward(record, origins, directions, background, grad_rgb):
    grad_colors, grad_sigmas = composite_backward(record['colors'], record['sigmas'],
                                                  record['samples'].deltas, background, grad_rgb)
    grad_params, grad_points, grad_view = record['field'].backward(record['cache'], grad_colors, grad_sigmas)
    depths = record['samples'].depths
    grad_origins = grad_points.sum(axis=1)
    grad_dirs = (grad_points * depths[..., None]).sum(axis=1) + grad_view.sum(axis=1)
    return grad_params, grad_origins, grad_dirs


def render_rays_backward(result, sampling, grad_rgb_coarse=None, grad_rgb_fine=None):
    """\
    Back-propagates gradients w.r.t. the composited colors of each pass. Sample placement is treated as
    constant.

    :param result: RenderResult from render_rays()
    :param sampling: SamplingConfig used for rendering
    :param grad_rgb_coarse: gradient w.r.t. the coarse color (N, 3), or None
    :param grad_rgb_fine: gradient w.r.t. the fine color (N, 3), or None
    :return: tuple of (grad_coarse_params, grad_fine_params, grad_origins (N, 3), grad_directions (N, 3)). \
    Parameter gradients are None for passes which received no upstream gradient.

    """
    grad_origins = np.zeros_like(result.origins)
    grad_dirs = np.zeros_like(result.directions)
    param_grads = [None, None]

    for idx, upstream in enumerate([grad_rgb_coarse, grad_rgb_fine]):
        if upstream is None or idx >= len(result.passes):
            continue
        grad_params, g_o, g_d = _render_pass_backward(result.passes[idx], result.origins, result.directions,
                                                      sampling.background, upstream)
        param_grads[idx] = grad_params
        grad_origins += g_o
        grad_dirs += g_d

    return param_grads[0], param_grads[1], grad_origins, grad_dirs


def final_pass_gradients(result, grad_rgb):
    """Routes a gradient w.r.t. result.rgb to the pass which produced it"""
    if len(result.passes) > 1:
        return None, grad_rgb
    return grad_rgb, None


def render_pixel(fields, intrinsics, pose, pixel, sampling, seed=None):
    """\
    Renders a single pixel: pixel_to_ray, sample_depths, query per sample and composite.

    :param fields: field or (coarse, fine) pair
    :param intrinsics: CameraIntrinsics
    :param pose: camera-to-world Pose
    :param pixel: (x, y) pixel coordinates
    :param sampling: SamplingConfig
    :param seed: None for deterministic sampling, or stratified seed keys
    :return: rgb 3-vector

    """
    origins, dirs = generate_rays(intrinsics, pose, [pixel])
    return render_rays(fields, origins, dirs, sampling, seed=seed).rgb[0]


def render_pixel_backward(fields, intrinsics, pose, pixel, sampling, upstream, seed=None):
    """\
    Gradients of a scalar loss w.r.t. field parameters and a left perturbation of the pose, given the
    gradient w.r.t. the rendered pixel color.

    :return: tuple of ((grad_coarse, grad_fine), grad_twist 6-vector)

    """
    origins, dirs = generate_rays(intrinsics, pose, [pixel])
    result = render_rays(fields, origins, dirs, sampling, seed=seed)
    grad_c, grad_f = final_pass_gradients(result, np.asarray(upstream, dtype=np.float64).reshape(1, 3))
    g_coarse, g_fine, g_o, g_d = render_rays_backward(result, sampling, grad_c, grad_f)
    return (g_coarse, g_fine), twist_gradient_from_rays(origins, dirs, g_o, g_d)


# pylint: disable=too-many-arguments
def render_image(fields, intrinsics, pose, sampling, seed=None, threads=1, chunk_size=4096):
    """\
    Renders a full image. Pixels are split into chunks evaluated independently and written back in order.

    :param fields: field or (coarse, fine) pair
    :param intrinsics: CameraIntrinsics
    :param pose: camera-to-world Pose
    :param sampling: SamplingConfig
    :param seed: None for deterministic sampling, or stratified seed keys (extended with the chunk index)
    :param threads: worker threads
    :param chunk_size: rays per chunk
    :return: ImageBuffer, array (H, W, 3)

    """
    pixels = pixel_centers(intrinsics)
    origins, dirs = generate_rays(intrinsics, pose, pixels)

    def _render_chunk(args):
        idx, slc = args
        chunk_seed = None if seed is None else tuple(np.atleast_1d(seed)) + (idx, )
        return render_rays(fields, origins[slc], dirs[slc], sampling, seed=chunk_seed).rgb

    chunks = list(enumerate(chunked(len(pixels), chunk_size)))
    rgb = np.concatenate(parallel_map(_render_chunk, chunks, threads=threads), axis=0)
    return rgb.reshape(intrinsics.height, intrinsics.width, 3)
