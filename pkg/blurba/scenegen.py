"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Closed-form ground truth scenes and synthetic blurry datasets.

"""
import logging
import os
from datetime import datetime

import numpy as np
from dateutil import parser as date_parser
from scipy.special import expit

from blurba import ConfigError, VersionError, assert_range
from blurba.blur_model import TrajectorySegment, virtual_poses
from blurba.images import write_png, write_f32, read_f32
from blurba.lie import Pose, se3_exp, compose, interpolate
from blurba.metrics import psnr
from blurba.profile import MeasureExecution
from blurba.renderer import CameraIntrinsics, SamplingConfig, render_image
from blurba.utils import make_rng, parallel_map, read_json, write_json

LOGGER = logging.getLogger(__name__)

DATASET_VERSION = 1
DENSITY_EPS = 1e-12


class Sphere:
    """A ball of constant density and albedo"""
    def __init__(self, center, radius, density, albedo):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.density = float(density)
        self.albedo = np.asarray(albedo, dtype=np.float64)

    def signed_distance(self, points):
        """Signed distance to the surface (negative inside) and its gradient"""
        offset = np.asarray(points, dtype=np.float64) - self.center
        norm = np.linalg.norm(offset, axis=-1)
        grad = offset / np.maximum(norm, DENSITY_EPS)[..., None]
        return norm - self.radius, grad

    def intersect(self, origin, direction):
        """Interval (t0, t1) of the ray inside the sphere, or None"""
        offset = origin - self.center
        b = np.dot(offset, direction)
        c = np.dot(offset, offset) - self.radius ** 2
        disc = b * b - c
        if disc <= 0:
            return None
        root = np.sqrt(disc)
        return -b - root, -b + root

    def bounds(self):
        """Axis-aligned bounding box"""
        return self.center - self.radius, self.center + self.radius

    def to_json(self):
        """Serializes this primitive to JSON primitives"""
        return {'type': 'sphere', 'center': self.center.tolist(), 'radius': self.radius,
                'density': self.density, 'albedo': self.albedo.tolist()}


class Box:
    """An axis-aligned box of constant density and albedo"""
    def __init__(self, lower, upper, density, albedo):
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.density = float(density)
        self.albedo = np.asarray(albedo, dtype=np.float64)

    def signed_distance(self, points):
        """Signed distance to the surface (negative inside) and its gradient"""
        points = np.asarray(points, dtype=np.float64)
        center = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower)
        offset = points - center
        sign = np.where(offset >= 0, 1.0, -1.0)
        q = np.abs(offset) - half

        outside = np.maximum(q, 0.0)
        outside_norm = np.linalg.norm(outside, axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        dist = outside_norm + inside

        grad_out = sign * outside / np.maximum(outside_norm, DENSITY_EPS)[..., None]
        grad_in = sign * (np.arange(3) == q.argmax(axis=-1)[..., None])
        grad = np.where((outside_norm > 0)[..., None], grad_out, grad_in)
        return dist, grad

    def intersect(self, origin, direction):
        """Interval (t0, t1) of the ray inside the box (slab method), or None"""
        with np.errstate(divide='ignore', invalid='ignore'):
            inv = 1.0 / direction
            t_a = (self.lower - origin) * inv
            t_b = (self.upper - origin) * inv
        parallel = direction == 0
        inside_slab = (origin >= self.lower) & (origin <= self.upper)
        t_lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t_a, t_b))
        t_hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t_a, t_b))
        t0, t1 = t_lo.max(), t_hi.min()
        if t0 >= t1:
            return None
        return t0, t1

    def bounds(self):
        """Axis-aligned bounding box"""
        return self.lower, self.upper

    def to_json(self):
        """Serializes this primitive to JSON primitives"""
        return {'type': 'box', 'lower': self.lower.tolist(), 'upper': self.upper.tolist(),
                'density': self.density, 'albedo': self.albedo.tolist()}


def primitive_from_json(obj):
    """Parses a Sphere or a Box"""
    if obj['type'] == 'sphere':
        return Sphere(obj['center'], obj['radius'], obj['density'], obj['albedo'])
    elif obj['type'] == 'box':
        return Box(obj['lower'], obj['upper'], obj['density'], obj['albedo'])
    else:
        raise ConfigError(f"Unknown primitive type: {obj['type']}")


class AnalyticScene:
    """\
    A scene made of constant-density primitives. Where primitives overlap, densities add and colors mix
    in proportion to density.

    """
    def __init__(self, primitives, background=(0.0, 0.0, 0.0), bounds=((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))):
        self.primitives = list(primitives)
        self.background = np.asarray(background, dtype=np.float64)
        self.bounds = (np.asarray(bounds[0], dtype=np.float64), np.asarray(bounds[1], dtype=np.float64))

    @staticmethod
    def default():
        """Two spheres and a box inside the unit cube"""
        return AnalyticScene([
            Sphere((-0.18, 0.12, 0.05), 0.22, 8.0, (0.9, 0.3, 0.2)),
            Sphere((0.22, -0.15, 0.12), 0.17, 12.0, (0.2, 0.7, 0.9)),
            Box((-0.3, -0.4, -0.4), (0.35, 0.1, -0.18), 10.0, (0.9, 0.85, 0.3)),
        ])

    @property
    def diameter(self):
        """Largest side of the scene bounds"""
        return float(np.max(self.bounds[1] - self.bounds[0]))

    def validate(self):
        """Checks densities, albedos and bounds, raising ConfigError on failure"""
        for prim in self.primitives:
            if prim.density < 0:
                raise ConfigError("Primitive densities must be non-negative")
            if np.any(prim.albedo < 0) or np.any(prim.albedo > 1):
                raise ConfigError("Albedo must lie in [0, 1]")
            lower, upper = prim.bounds()
            if np.any(lower < self.bounds[0] - 1e-9) or np.any(upper > self.bounds[1] + 1e-9):
                raise ConfigError(f"Primitive {prim.to_json()} lies outside the scene bounds")
        if np.any(self.background < 0) or np.any(self.background > 1):
            raise ConfigError("Background color must lie in [0, 1]")
        return self

    def density_and_color(self, points):
        """\
        Exact piecewise-constant lookup.

        :param points: array (..., 3)
        :return: tuple of (sigma (...), color (..., 3))

        """
        points = np.asarray(points, dtype=np.float64)
        sigma = np.zeros(points.shape[:-1])
        weighted = np.zeros(points.shape)
        for prim in self.primitives:
            dist, _ = prim.signed_distance(points)
            density = np.where(dist < 0, prim.density, 0.0)
            sigma += density
            weighted += density[..., None] * prim.albedo
        return sigma, weighted / np.maximum(sigma, DENSITY_EPS)[..., None]

    def to_json(self):
        """Serializes this scene to JSON primitives"""
        return {'primitives': [prim.to_json() for prim in self.primitives],
                'background': self.background.tolist(),
                'bounds': [self.bounds[0].tolist(), self.bounds[1].tolist()]}

    @staticmethod
    def from_json(obj):
        """Parses a scene from JSON primitives"""
        return AnalyticScene([primitive_from_json(prim) for prim in obj['primitives']],
                             obj['background'], obj['bounds'])


class OracleField:
    """\
    Wraps an AnalyticScene in the field interface used by the renderer (forward/backward with caches), so
    the analytic scene can stand in for a learned field. With softness > 0, primitive boundaries are
    smoothed with a sigmoid of the signed distance, which makes the outputs differentiable w.r.t. position.

    """
    def __init__(self, scene, softness=0.0):
        self.scene = scene
        self.softness = float(softness)

    def forward(self, x_world, dir_world):
        """\
        Evaluates colors and densities.

        :param x_world: array (..., 3)
        :param dir_world: array (..., 3). Ignored: the scene is Lambertian.
        :return: tuple of (color (..., 3), sigma (...), cache)

        """
        x_world = np.asarray(x_world, dtype=np.float64)
        if self.softness <= 0:
            sigma, color = self.scene.density_and_color(x_world)
            return color, sigma, {'x': x_world, 'd': dir_world, 'soft': None}

        sigma = np.zeros(x_world.shape[:-1])
        weighted = np.zeros(x_world.shape)
        terms = []
        for prim in self.scene.primitives:
            dist, grad_dist = prim.signed_distance(x_world)
            occupancy = expit(-dist / self.softness)
            density = prim.density * occupancy
            sigma += density
            weighted += density[..., None] * prim.albedo
            terms.append((prim, occupancy, grad_dist, density))

        color = weighted / (sigma + DENSITY_EPS)[..., None]
        return color, sigma, {'x': x_world, 'd': dir_world, 'soft': terms, 'sigma': sigma, 'color': color}

    def backward(self, cache, grad_color, grad_sigma):
        """\
        Gradients w.r.t. inputs. The scene has no learnable parameters.

        :return: tuple of (None, grad_x (..., 3), grad_dir (..., 3))

        """
        x_world = cache['x']
        grad_x = np.zeros(x_world.shape)
        grad_d = np.zeros(np.shape(cache['d']))
        if cache['soft'] is None:
            return None, grad_x, grad_d

        grad_color = np.asarray(grad_color, dtype=np.float64)
        grad_sigma = np.asarray(grad_sigma, dtype=np.float64)
        denom = cache['sigma'] + DENSITY_EPS
        for prim, occupancy, grad_dist, _ in cache['soft']:
            # d(density)/dx of this primitive
            d_density = -(prim.density * occupancy * (1.0 - occupancy) / self.softness)[..., None] * grad_dist
            color_term = ((prim.albedo - cache['color']) * grad_color).sum(axis=-1) / denom
            grad_x += (grad_sigma + color_term)[..., None] * d_density
        return None, grad_x, grad_d


def analytic_render_ray(scene, origin, direction, near, far):
    """\
    Exact compositing of a ray through the piecewise-constant scene, using ray/primitive intervals.

    :param scene: AnalyticScene
    :param origin: ray origin
    :param direction: unit ray direction
    :param near: near bound
    :param far: far bound
    :return: rgb 3-vector

    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    breaks = {near, far}
    for prim in scene.primitives:
        hit = prim.intersect(origin, direction)
        if hit is None:
            continue
        for t in hit:
            if near < t < far:
                breaks.add(float(t))

    breaks = sorted(breaks)
    rgb = np.zeros(3)
    transmittance = 1.0
    for t0, t1 in zip(breaks[:-1], breaks[1:]):
        sigma, color = scene.density_and_color(origin + direction * (0.5 * (t0 + t1)))
        absorbed = 1.0 - np.exp(-sigma * (t1 - t0))
        rgb += transmittance * absorbed * color
        transmittance *= 1.0 - absorbed
    return rgb + transmittance * scene.background


# pylint: disable=too-many-arguments
def oracle_render(scene, intrinsics, pose, quality, near=0.5, far=3.5, threads=1):
    """\
    Renders a ground truth image of an analytic scene with dense, uniformly spaced samples.

    :param scene: AnalyticScene
    :param intrinsics: CameraIntrinsics
    :param pose: camera-to-world Pose
    :param quality: samples per ray, >= 1
    :param near: near bound
    :param far: far bound
    :param threads: worker threads
    :return: ImageBuffer (H, W, 3)

    """
    assert_range("quality", quality, min_val=1)
    sampling = SamplingConfig(n_coarse=quality, n_fine=0, near=near, far=far, stratified=False,
                              use_fine=False, background=tuple(scene.background))
    return render_image(OracleField(scene), intrinsics, pose, sampling, threads=threads)


class TrajectorySpec:
    """\
    How exposure trajectories of a synthetic dataset are generated.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, mode="random", profile="constant", radius=2.0, elevation_range=(15.0, 55.0),
                 translation_blur=0.05, rotation_blur=3.0, chain_arc=90.0):
        """\

        :param mode: "random" for independent anchor views around the scene, "chain" for anchors along a \
        continuous arc
        :param profile: "constant" for constant-velocity exposures, "accelerating" for exposures whose speed \
        grows linearly over time
        :param radius: distance of cameras from the scene center, scene units
        :param elevation_range: (min, max) camera elevation in degrees
        :param translation_blur: translation during one exposure, as a fraction of the scene diameter
        :param rotation_blur: rotation during one exposure, degrees
        :param chain_arc: azimuth spanned by all anchors in chain mode, degrees
        """
        self.mode = mode
        self.profile = profile
        self.radius = radius
        self.elevation_range = tuple(elevation_range)
        self.translation_blur = translation_blur
        self.rotation_blur = rotation_blur
        self.chain_arc = chain_arc

    @staticmethod
    def static(**kwargs):
        """A spec without motion during exposures"""
        return TrajectorySpec(translation_blur=0.0, rotation_blur=0.0, **kwargs)

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        if self.mode not in ("random", "chain"):
            raise ConfigError(f"Unknown trajectory mode: {self.mode}")
        if self.profile not in ("constant", "accelerating"):
            raise ConfigError(f"Unknown velocity profile: {self.profile}")
        assert_range("radius", self.radius, min_val=0)
        assert_range("translation_blur", self.translation_blur, min_val=0)
        assert_range("rotation_blur", self.rotation_blur, min_val=0, max_val=179.0)
        return self

    def exposure_times(self, n):
        """Normalized positions along the exposure path of n equally spaced instants"""
        times = np.linspace(0.0, 1.0, n)
        return times if self.profile == "constant" else times ** 2

    def to_json(self):
        """Serializes this spec to JSON primitives"""
        return {'mode': self.mode, 'profile': self.profile, 'radius': self.radius,
                'elevation_range': list(self.elevation_range), 'translation_blur': self.translation_blur,
                'rotation_blur': self.rotation_blur, 'chain_arc': self.chain_arc}

    @staticmethod
    def from_json(obj):
        """Parses a TrajectorySpec from JSON primitives"""
        return TrajectorySpec(**obj)


def _random_unit(rng):
    vec = rng.normal(size=3)
    return vec / np.linalg.norm(vec)


def anchor_poses(spec, n_frames, rng):
    """\
    Mid-exposure camera poses looking at the scene center.

    :param spec: TrajectorySpec
    :param n_frames: number of frames
    :param rng: numpy Generator
    :return: list of Poses

    """
    low, high = np.radians(spec.elevation_range)
    if spec.mode == "chain":
        azimuths = np.radians(np.linspace(0.0, spec.chain_arc, n_frames))
        elevations = np.full(n_frames, 0.5 * (low + high))
    else:
        azimuths = rng.uniform(0.0, 2 * np.pi, size=n_frames)
        elevations = rng.uniform(low, high, size=n_frames)

    poses = []
    for azimuth, elevation in zip(azimuths, elevations):
        eye = spec.radius * np.array([np.cos(elevation) * np.cos(azimuth),
                                      np.cos(elevation) * np.sin(azimuth),
                                      np.sin(elevation)])
        poses.append(Pose.look_at(eye, np.zeros(3)))
    return poses


def heldout_poses(spec, n_views, rng):
    """\
    Camera poses for novel-view evaluation. In chain mode they sit halfway between consecutive training
    anchors of an n_views + 1 frame chain; otherwise they are drawn like training anchors.

    :param spec: TrajectorySpec
    :param n_views: number of held-out views
    :param rng: numpy Generator
    :return: list of Poses

    """
    if spec.mode != "chain":
        return anchor_poses(spec, n_views, rng)

    elevation = np.radians(0.5 * (spec.elevation_range[0] + spec.elevation_range[1]))
    azimuths = np.radians(spec.chain_arc * (np.arange(n_views) + 0.5) / max(n_views, 1))
    return [Pose.look_at(spec.radius * np.array([np.cos(elevation) * np.cos(azimuth),
                                                 np.cos(elevation) * np.sin(azimuth),
                                                 np.sin(elevation)]), np.zeros(3))
            for azimuth in azimuths]


def exposure_twist(spec, diameter, rng):
    """\
    Twist, in camera coordinates, of the motion during one exposure.

    :param spec: TrajectorySpec
    :param diameter: scene diameter
    :param rng: numpy Generator
    :return: 6-vector [rho; phi]

    """
    if spec.mode == "chain":
        rho_dir, phi_dir = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    else:
        rho_dir, phi_dir = _random_unit(rng), _random_unit(rng)
    return np.concatenate([spec.translation_blur * diameter * rho_dir, np.radians(spec.rotation_blur) * phi_dir])


class DatasetFrame:
    """\
    One observed blurry image and its ground truth.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, blurry, sharp, pose_start, pose_mid, pose_end, n_synth):
        self.blurry = blurry
        self.sharp = sharp
        self.pose_start = pose_start
        self.pose_mid = pose_mid
        self.pose_end = pose_end
        self.n_synth = n_synth

    @property
    def blur_psnr(self):
        """PSNR of the blurry input against the sharp ground truth"""
        return psnr(self.blurry, self.sharp)

    @property
    def segment(self):
        """Ground truth exposure trajectory"""
        return TrajectorySegment(self.pose_start, self.pose_end)


class HeldoutView:
    """\
    A sharp ground truth image at a pose no training frame was captured from.

    """
    def __init__(self, pose, sharp):
        self.pose = pose
        self.sharp = sharp


class Dataset:
    """\
    A synthetic dataset: frames, shared intrinsics and the scene they were rendered from. Held-out views
    are never used for training.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, frames, intrinsics, scene, near, far, n_synth, seed, trajectory=None, created=None,
                 heldout=None):
        self.frames = frames
        self.heldout = list(heldout or [])
        self.intrinsics = intrinsics
        self.scene = scene
        self.near = near
        self.far = far
        self.n_synth = n_synth
        self.seed = seed
        self.trajectory = trajectory
        self.created = created or datetime.now()

    def __len__(self):
        return len(self.frames)

    def sampling_config(self, **kwargs):
        """SamplingConfig with this dataset's near/far bounds and background"""
        return SamplingConfig(near=self.near, far=self.far, background=tuple(self.scene.background), **kwargs)

    def meta_json(self):
        """Contents of meta.json"""
        return {'schema_version': DATASET_VERSION,
                'created': self.created.isoformat(),
                'intrinsics': self.intrinsics.to_json(),
                'near': self.near,
                'far': self.far,
                'scene': self.scene.to_json(),
                'scene_bounds': self.scene.to_json()['bounds'],
                'n_synth': self.n_synth,
                'seed': self.seed,
                'trajectory': self.trajectory.to_json() if self.trajectory is not None else None,
                'png_encoding': 'srgb',
                'frames': [{'index': idx,
                            'pose_start': frame.pose_start.to_json(),
                            'pose_mid': frame.pose_mid.to_json(),
                            'pose_end': frame.pose_end.to_json(),
                            'n_synth': frame.n_synth,
                            'blurry': f"blur_{idx:04d}.f32",
                            'sharp': f"sharp_{idx:04d}.f32"}
                           for idx, frame in enumerate(self.frames)],
                'heldout': [{'index': idx,
                             'pose': view.pose.to_json(),
                             'sharp': f"heldout_{idx:04d}.f32"}
                            for idx, view in enumerate(self.heldout)]}


def _synthesize_frame(scene, spec, intrinsics, anchor, xi, n_synth, quality, near, far):
    pose_start = compose(anchor, se3_exp(-0.5 * xi))
    pose_end = compose(anchor, se3_exp(0.5 * xi))
    pose_mid = interpolate(pose_start, pose_end, 0.5)
    sharp = oracle_render(scene, intrinsics, pose_mid, quality, near, far)

    if spec.profile == "constant":
        poses = virtual_poses(TrajectorySegment(pose_start, pose_end), n_synth)
    else:
        poses = [interpolate(pose_start, pose_end, u) for u in spec.exposure_times(n_synth)]

    if all(pose == pose_mid for pose in poses):
        blurry = sharp.copy()
    else:
        blurry = np.zeros_like(sharp)
        for pose in poses:
            blurry += oracle_render(scene, intrinsics, pose, quality, near, far)
        blurry /= n_synth

    return DatasetFrame(blurry, sharp, pose_start, pose_mid, pose_end, n_synth)


# pylint: disable=too-many-arguments
def generate_dataset(scene, spec, n_frames, n_synth=51, seed=0, intrinsics=None, quality=64, near=0.5, far=3.5,
                     threads=1, n_heldout=0):
    """\
    Generates a synthetic dataset: each blurry frame is the fixed-order mean of n_synth oracle renders along
    its exposure trajectory. Held-out views are sharp oracle renders at extra poses, drawn after every
    training frame so that they don't change the training frames of a given seed.

    :param scene: AnalyticScene
    :param spec: TrajectorySpec
    :param n_frames: number of frames K
    :param n_synth: number of virtual images averaged into each blurry frame, >= 2
    :param seed: RNG seed for anchors and exposure twists
    :param intrinsics: CameraIntrinsics. Defaults to 32x32 pixels with a 40 degree field of view.
    :param quality: oracle samples per ray
    :param near: near bound
    :param far: far bound
    :param threads: frames synthesized in parallel
    :param n_heldout: number of held-out views for novel-view evaluation
    :return: Dataset

    """
    scene.validate()
    spec.validate()
    assert_range("n_frames", n_frames, min_val=1)
    assert_range("n_synth", n_synth, min_val=2)
    assert_range("n_heldout", n_heldout, min_val=0)
    intrinsics = (intrinsics or CameraIntrinsics.from_fov(32, 32, 40.0)).validate()

    rng = make_rng(seed)
    anchors = anchor_poses(spec, n_frames, rng)
    twists = [exposure_twist(spec, scene.diameter, rng) for _ in anchors]
    heldout_anchors = heldout_poses(spec, n_heldout, rng) if n_heldout > 0 else []

    with MeasureExecution("Dataset synthesis"):
        frames = parallel_map(lambda args: _synthesize_frame(scene, spec, intrinsics, args[0], args[1],
                                                             n_synth, quality, near, far),
                              list(zip(anchors, twists)), threads=threads)
        heldout = parallel_map(lambda pose: HeldoutView(pose, oracle_render(scene, intrinsics, pose, quality,
                                                                            near, far)),
                               heldout_anchors, threads=threads)

    LOGGER.info("Generated %d frames and %d held-out views, mean blurry PSNR %.2f dB", len(frames), len(heldout),
                float(np.mean([frame.blur_psnr for frame in frames])))
    return Dataset(frames, intrinsics, scene, near, far, n_synth, seed, trajectory=spec, heldout=heldout)


def sample_perturbations(n, sigma_rot, sigma_trans, rng):
    """\
    Draws random twists ~ N(0, diag(sigma_trans^2 x3, sigma_rot^2 x3)).

    :param n: number of twists
    :param sigma_rot: rotation standard deviation, radians
    :param sigma_trans: translation standard deviation, scene units
    :param rng: numpy Generator
    :return: array (n, 6)

    """
    if sigma_rot < 0 or sigma_trans < 0:
        raise ConfigError("Perturbation standard deviations must be non-negative")
    scale = np.array([sigma_trans] * 3 + [sigma_rot] * 3)
    return rng.normal(size=(n, 6)) * scale


def perturb_poses(dataset, sigma_rot, sigma_trans, seed):
    """\
    Initial pose estimates: each frame's ground truth mid-exposure pose composed with a random twist. Both
    ends of every segment start at that pose (zero-motion initialization).

    :param dataset: Dataset
    :param sigma_rot: rotation standard deviation, radians
    :param sigma_trans: translation standard deviation, scene units
    :param seed: RNG seed
    :return: list of TrajectorySegment, one per frame

    """
    noise = sample_perturbations(len(dataset), sigma_rot, sigma_trans, make_rng(seed))
    segments = []
    for frame, twist in zip(dataset.frames, noise):
        pose = frame.pose_mid if not np.any(twist) else compose(se3_exp(twist), frame.pose_mid)
        segments.append(TrajectorySegment.static(pose))
    return segments


def write_dataset(dataset, path, srgb_png=True):
    """\
    Writes a dataset directory: meta.json, plus blur_####/sharp_#### images as 8-bit PNG (for inspection)
    and raw float32 (authoritative).

    :param dataset: Dataset
    :param path: output directory. Created if it doesn't exist.
    :param srgb_png: if True, PNGs are sRGB-encoded. Otherwise they hold quantized linear values.
    :return: None

    """
    os.makedirs(path, exist_ok=True)
    meta = dataset.meta_json()
    meta['png_encoding'] = 'srgb' if srgb_png else 'linear'
    write_json(meta, os.path.join(path, "meta.json"))

    for idx, frame in enumerate(dataset.frames):
        for prefix, image in (("blur", frame.blurry), ("sharp", frame.sharp)):
            write_f32(os.path.join(path, f"{prefix}_{idx:04d}.f32"), image)
            write_png(os.path.join(path, f"{prefix}_{idx:04d}.png"), image, srgb=srgb_png)
    for idx, view in enumerate(dataset.heldout):
        write_f32(os.path.join(path, f"heldout_{idx:04d}.f32"), view.sharp)
        write_png(os.path.join(path, f"heldout_{idx:04d}.png"), view.sharp, srgb=srgb_png)
    LOGGER.info("Wrote %d frames and %d held-out views to %s", len(dataset), len(dataset.heldout), path)


def read_dataset(path):
    """\
    Reads a dataset written by write_dataset(). Images are read from the float32 files.

    :param path: dataset directory
    :return: Dataset

    """
    meta = read_json(os.path.join(path, "meta.json"))
    if meta.get('schema_version') != DATASET_VERSION:
        raise VersionError(f"Unsupported dataset version {meta.get('schema_version')} in {path} "
                           f"(expected {DATASET_VERSION})")

    intrinsics = CameraIntrinsics.from_json(meta['intrinsics'])
    frames = []
    for entry in meta['frames']:
        blurry = read_f32(os.path.join(path, entry['blurry']), intrinsics.height, intrinsics.width)
        sharp = read_f32(os.path.join(path, entry['sharp']), intrinsics.height, intrinsics.width)
        frames.append(DatasetFrame(blurry, sharp, Pose.from_json(entry['pose_start']),
                                   Pose.from_json(entry['pose_mid']), Pose.from_json(entry['pose_end']),
                                   entry['n_synth']))

    # datasets written without a held-out split have no 'heldout' key
    heldout = [HeldoutView(Pose.from_json(entry['pose']),
                           read_f32(os.path.join(path, entry['sharp']), intrinsics.height, intrinsics.width))
               for entry in meta.get('heldout', [])]

    trajectory = TrajectorySpec.from_json(meta['trajectory']) if meta.get('trajectory') else None
    return Dataset(frames, intrinsics, AnalyticScene.from_json(meta['scene']), meta['near'], meta['far'],
                   meta['n_synth'], meta['seed'], trajectory=trajectory,
                   created=date_parser.isoparse(meta['created']), heldout=heldout)
