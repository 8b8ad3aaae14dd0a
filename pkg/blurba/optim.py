"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Joint optimization of radiance field parameters and exposure trajectories: photometric loss, two Adam
optimizers with exponentially decaying learning rates, checkpoints and the metrics log.

"""
import logging
import os
import time

import humanize
import numpy as np
import pandas as pd

from blurba import NonFiniteLossError, ShapeMismatchError, ConfigError, assert_range
from blurba.blur_model import BlurConfig, TrajectorySegment, synthesize_blurry, synthesize_blurry_backward
from blurba.field import FieldConfig, FieldParams, save_checkpoint, load_checkpoint
from blurba.profile import MeasureExecution
from blurba.renderer import SamplingConfig
from blurba.scenegen import OracleField
from blurba.utils import make_rng, read_json, write_json

LOGGER = logging.getLogger(__name__)

BATCH_STREAM = 0
TRAIN_STATE_VERSION = 1


class TrainConfig:
    """\
    Training hyperparameters. Defaults are desk-scale: 5000 iterations of 512 rays, 32 coarse + 32 fine
    samples, 7 virtual images per blurry pixel.

    """
    # pylint: disable=too-many-arguments, too-many-locals, too-many-instance-attributes
    def __init__(self, iterations=5000, rays_per_batch=512,
                 lr_field_start=5e-4, lr_field_end=5e-5, lr_pose_start=1e-3, lr_pose_end=1e-5,
                 blur=None, sampling=None, field=None, seed=0, threads=1,
                 log_every=100, checkpoint_every=1000, field_source="learned", oracle_softness=0.02,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        """\

        :param iterations: number of optimization steps
        :param rays_per_batch: pixels per batch, drawn uniformly over (image, pixel) pairs
        :param lr_field_start: field learning rate at iteration 0
        :param lr_field_end: field learning rate at the last iteration
        :param lr_pose_start: pose learning rate at iteration 0
        :param lr_pose_end: pose learning rate at the last iteration
        :param blur: BlurConfig
        :param sampling: SamplingConfig
        :param field: FieldConfig of both the coarse and the fine network
        :param seed: seed for initialization, batches and depth sampling
        :param threads: worker threads
        :param log_every: iterations between progress log lines
        :param checkpoint_every: iterations between checkpoints (when an output directory is given)
        :param field_source: "learned" to optimize a radiance field, "oracle" to render the analytic scene \
        and optimize poses only
        :param oracle_softness: boundary softness of the oracle field, scene units
        :param beta1: Adam first moment decay
        :param beta2: Adam second moment decay
        :param eps: Adam epsilon
        """
        self.iterations = iterations
        self.rays_per_batch = rays_per_batch
        self.lr_field_start = lr_field_start
        self.lr_field_end = lr_field_end
        self.lr_pose_start = lr_pose_start
        self.lr_pose_end = lr_pose_end
        self.blur = blur or BlurConfig()
        self.sampling = sampling or SamplingConfig()
        self.field = field or FieldConfig()
        self.seed = seed
        self.threads = threads
        self.log_every = log_every
        self.checkpoint_every = checkpoint_every
        self.field_source = field_source
        self.oracle_softness = oracle_softness
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        assert_range("iterations", self.iterations, min_val=0)
        assert_range("rays_per_batch", self.rays_per_batch, min_val=1)
        for name in ("field", "pose"):
            start, end = getattr(self, f"lr_{name}_start"), getattr(self, f"lr_{name}_end")
            assert_range(f"lr_{name}_start", start, min_val=0)
            assert_range(f"lr_{name}_end", end, min_val=0)
            if end > start:
                raise ConfigError(f"lr_{name}_end ({end}) must not exceed lr_{name}_start ({start})")
            if (start == 0) != (end == 0):
                raise ConfigError(f"lr_{name} schedule must be either all zero or strictly positive")
        assert_range("threads", self.threads, min_val=1)
        assert_range("log_every", self.log_every, min_val=1)
        assert_range("checkpoint_every", self.checkpoint_every, min_val=1)
        if self.field_source not in ("learned", "oracle"):
            raise ConfigError(f"field_source must be learned or oracle, got {self.field_source}")
        assert_range("oracle_softness", self.oracle_softness, min_val=0)
        assert_range("beta1", self.beta1, min_val=0, max_val=1)
        assert_range("beta2", self.beta2, min_val=0, max_val=1)
        self.blur.validate()
        self.sampling.validate()
        self.field.validate()
        return self

    def to_json(self):
        """Serializes this config to JSON primitives"""
        return {'iterations': self.iterations, 'rays_per_batch': self.rays_per_batch,
                'lr_field_start': self.lr_field_start, 'lr_field_end': self.lr_field_end,
                'lr_pose_start': self.lr_pose_start, 'lr_pose_end': self.lr_pose_end,
                'blur': self.blur.to_json(), 'sampling': self.sampling.to_json(), 'field': self.field.to_json(),
                'seed': self.seed, 'threads': self.threads, 'log_every': self.log_every,
                'checkpoint_every': self.checkpoint_every, 'field_source': self.field_source,
                'oracle_softness': self.oracle_softness, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps}

    @staticmethod
    def from_json(obj):
        """Parses a TrainConfig from JSON primitives"""
        obj = dict(obj)
        obj['blur'] = BlurConfig.from_json(obj['blur']) if obj.get('blur') else None
        obj['sampling'] = SamplingConfig.from_json(obj['sampling']) if obj.get('sampling') else None
        obj['field'] = FieldConfig.from_json(obj['field']) if obj.get('field') else None
        return TrainConfig(**obj)


class AdamState:
    """\
    Moment estimates of an Adam optimizer over a flat parameter vector.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, m, v, step=0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.asarray(m, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.step = step
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    @staticmethod
    def zeros(size, beta1=0.9, beta2=0.999, eps=1e-8):
        """Fresh optimizer state for a parameter vector of the given size"""
        return AdamState(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)

    def to_json(self):
        """Scalar state. Moments are stored separately as .npy files."""
        return {'step': self.step, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps}


def adam_step(state, params, grads, lr):
    """\
    One bias-corrected Adam update.

    :param state: AdamState
    :param params: flat parameter vector
    :param grads: flat gradient vector, same shape
    :param lr: learning rate
    :return: tuple of (updated parameters, updated AdamState)

    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape or params.shape != state.v.shape:
        raise ShapeMismatchError(f"Adam shapes disagree: params {params.shape}, grads {grads.shape}, "
                                 f"moments {state.m.shape}/{state.v.shape}")

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    updated = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def lr_at(iteration, total_iterations, lr_start, lr_end):
    """\
    Exponentially decaying learning rate: ``lr_start * (lr_end / lr_start) ** (iteration / total_iterations)``.

    :param iteration: current iteration, 0 <= iteration <= total_iterations
    :param total_iterations: schedule length
    :param lr_start: rate at iteration 0
    :param lr_end: rate at total_iterations
    :return: learning rate

    """
    if lr_start == 0 or total_iterations <= 0:
        return lr_start
    if iteration >= total_iterations:
        return lr_end
    return lr_start * (lr_end / lr_start) ** (iteration / total_iterations)


def photometric_loss(synth, observed):
    """\
    Mean squared error over all color channels of a batch.

    :param synth: synthesized colors, array (N, 3) or list of rgb
    :param observed: observed colors, same shape
    :return: scalar

    """
    synth = np.asarray(synth, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if synth.shape != observed.shape:
        raise ShapeMismatchError(f"Batch shapes differ: {synth.shape} vs {observed.shape}")
    return float(np.mean((synth - observed) ** 2))


def photometric_loss_backward(synth, observed):
    """Gradient of photometric_loss() w.r.t. synth"""
    synth = np.asarray(synth, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    return 2.0 * (synth - observed) / synth.size


class TrainState:
    """\
    Everything the trainer updates: fields, one trajectory segment per image, both optimizers and the loss
    history.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, fields, segments, field_adam, pose_adam, iteration=0, loss_history=None):
        """\

        :param fields: tuple of (coarse, fine). fine is None in single-network mode. coarse is an \
        OracleField when optimizing poses only.
        :param segments: list of TrajectorySegment, one per image
        :param field_adam: AdamState over the concatenated coarse and fine parameters, or None
        :param pose_adam: AdamState over all twists (12 per image)
        :param iteration: number of completed steps
        :param loss_history: list of losses, one per completed step
        """
        self.fields = tuple(fields)
        self.segments = list(segments)
        self.field_adam = field_adam
        self.pose_adam = pose_adam
        self.iteration = iteration
        self.loss_history = list(loss_history or [])

    @staticmethod
    def initialize(config, segments, scene=None):
        """\
        Creates the initial training state.

        :param config: TrainConfig
        :param segments: initial TrajectorySegments, one per image
        :param scene: AnalyticScene, required when config.field_source is "oracle"
        :return: TrainState

        """
        if config.field_source == "oracle":
            if scene is None:
                raise ConfigError("The oracle field source needs the dataset's analytic scene")
            fields, field_adam = (OracleField(scene, config.oracle_softness), None), None
        else:
            coarse = FieldParams.initialize(config.field, seed=config.seed)
            fine = FieldParams.initialize(config.field, seed=config.seed + 1) \
                if config.sampling.use_fine and config.sampling.n_fine > 0 else None
            fields = (coarse, fine)
            field_adam = AdamState.zeros(field_vector(fields).size, config.beta1, config.beta2, config.eps)

        pose_adam = AdamState.zeros(12 * len(segments), config.beta1, config.beta2, config.eps)
        return TrainState(fields, segments, field_adam, pose_adam)

    @property
    def learned(self):
        """True if the fields hold learnable parameters"""
        return isinstance(self.fields[0], FieldParams)

    @property
    def render_fields(self):
        """The fields in the form the renderer expects"""
        return self.fields if self.fields[1] is not None else self.fields[0]

    def twist_vector(self):
        """All twists, 12 per image"""
        return np.concatenate([seg.twists for seg in self.segments])


def field_vector(fields):
    """Concatenated parameter vector of the coarse and (optional) fine fields"""
    return np.concatenate([field.as_vector() for field in fields if field is not None])


def _split_field_vector(fields, vector):
    result, offset = [], 0
    for field in fields:
        if field is None:
            result.append(None)
            continue
        size = field.size()
        result.append(field.with_vector(vector[offset:offset + size]))
        offset += size
    return tuple(result)


class Batch:
    """A batch of observed pixels"""
    def __init__(self, image_ids, pixels, observed):
        self.image_ids = image_ids
        self.pixels = pixels
        self.observed = observed


def sample_batch(dataset, n_rays, seed, iteration):
    """\
    Draws pixels uniformly over (image, pixel) pairs.

    :param dataset: Dataset
    :param n_rays: batch size
    :param seed: run seed
    :param iteration: current iteration
    :return: Batch

    """
    rng = make_rng(seed, iteration, BATCH_STREAM)
    height, width = dataset.intrinsics.height, dataset.intrinsics.width
    flat = rng.integers(0, len(dataset) * height * width, size=n_rays)
    image_ids, rest = np.divmod(flat, height * width)
    rows, cols = np.divmod(rest, width)
    pixels = np.stack([cols + 0.5, rows + 0.5], axis=-1).astype(np.float64)
    observed = np.stack([dataset.frames[k].blurry[r, c] for k, r, c in zip(image_ids, rows, cols)]) \
        if n_rays > 0 else np.zeros((0, 3))
    return Batch(image_ids, pixels, observed)


def compute_gradients(state, dataset, config, batch):
    """\
    Loss and gradients of one batch: coarse and fine photometric losses summed with equal weight.

    :param state: TrainState
    :param dataset: Dataset
    :param config: TrainConfig
    :param batch: Batch
    :return: tuple of (loss, field gradient vector or None, twist gradient vector)

    """
    result = synthesize_blurry(state.render_fields, dataset.intrinsics, state.segments, batch.image_ids,
                               batch.pixels, config.blur, config.sampling, seed=(config.seed, state.iteration),
                               threads=config.threads)

    loss = photometric_loss(result.rgb_coarse, batch.observed)
    grad_coarse = photometric_loss_backward(result.rgb_coarse, batch.observed)
    grad_fine = None
    if result.rgb_fine is not None:
        loss += photometric_loss(result.rgb_fine, batch.observed)
        grad_fine = photometric_loss_backward(result.rgb_fine, batch.observed)

    if not np.isfinite(loss):
        return loss, None, None

    param_grads, pose_grads = synthesize_blurry_backward(state.render_fields, result, config.sampling,
                                                         grad_coarse, grad_fine, threads=config.threads)

    field_grad = None
    if state.learned:
        field_grad = np.concatenate([(grad if grad is not None else field.zeros_like()).as_vector()
                                     for field, grad in zip(state.fields, param_grads) if field is not None])

    twist_grad = np.zeros(12 * len(state.segments))
    for image_id, grad in pose_grads.items():
        twist_grad[12 * image_id:12 * (image_id + 1)] = grad
    return loss, field_grad, twist_grad


def write_diagnostic_dump(state, config, path, loss):
    """Writes a JSON summary of the training state, used when the loss becomes non-finite"""
    dump = {'iteration': state.iteration,
            'loss': repr(loss),
            'lr_field': lr_at(state.iteration, config.iterations, config.lr_field_start, config.lr_field_end),
            'lr_pose': lr_at(state.iteration, config.iterations, config.lr_pose_start, config.lr_pose_end),
            'segments': [seg.to_json() for seg in state.segments],
            'parameter_norms': [float(np.linalg.norm(field.as_vector())) for field in state.fields
                                if isinstance(field, FieldParams)],
            'recent_losses': state.loss_history[-20:]}
    write_json(dump, path)


def train_step(state, dataset, config, out_dir=None):
    """\
    One optimization step: sample a batch, synthesize blurry pixels, back-propagate to the fields and to the
    twists of all touched segments, then apply both Adam updates.

    :param state: TrainState, updated in place
    :param dataset: Dataset
    :param config: TrainConfig
    :param out_dir: optional directory for the diagnostic dump written on non-finite losses
    :return: tuple of (state, loss)

    """
    batch = sample_batch(dataset, config.rays_per_batch, config.seed, state.iteration)
    loss, field_grad, twist_grad = compute_gradients(state, dataset, config, batch)

    if not np.isfinite(loss):
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_diagnostic_dump(state, config, os.path.join(out_dir, "nonfinite_dump.json"), loss)
        raise NonFiniteLossError(f"Loss became {loss} at iteration {state.iteration}")

    lr_field = lr_at(state.iteration, config.iterations, config.lr_field_start, config.lr_field_end)
    lr_pose = lr_at(state.iteration, config.iterations, config.lr_pose_start, config.lr_pose_end)

    if state.learned:
        updated, state.field_adam = adam_step(state.field_adam, field_vector(state.fields), field_grad, lr_field)
        state.fields = _split_field_vector(state.fields, updated)

    twists, state.pose_adam = adam_step(state.pose_adam, state.twist_vector(), twist_grad, lr_pose)
    state.segments = [seg.with_twists(twists[12 * idx:12 * (idx + 1)]) for idx, seg in enumerate(state.segments)]

    state.iteration += 1
    state.loss_history.append(loss)
    return state, loss


def save_training_checkpoint(state, config, path):
    """\
    Writes a checkpoint directory: coarse.ckpt, fine.ckpt (if any), segments.json, train_state.json and the
    Adam moments as .npy files.

    :param state: TrainState
    :param config: TrainConfig
    :param path: output directory
    :return: None

    """
    os.makedirs(path, exist_ok=True)
    coarse, fine = state.fields
    if state.learned:
        save_checkpoint(coarse, os.path.join(path, "coarse.ckpt"), extra={'iteration': state.iteration})
        if fine is not None:
            save_checkpoint(fine, os.path.join(path, "fine.ckpt"), extra={'iteration': state.iteration})
        np.save(os.path.join(path, "field_adam_m.npy"), state.field_adam.m)
        np.save(os.path.join(path, "field_adam_v.npy"), state.field_adam.v)

    np.save(os.path.join(path, "pose_adam_m.npy"), state.pose_adam.m)
    np.save(os.path.join(path, "pose_adam_v.npy"), state.pose_adam.v)
    write_json([seg.to_json() for seg in state.segments], os.path.join(path, "segments.json"))
    write_json({'schema_version': TRAIN_STATE_VERSION,
                'iteration': state.iteration,
                'loss_history': state.loss_history,
                'field_source': config.field_source,
                'config': config.to_json(),
                'field_adam': state.field_adam.to_json() if state.field_adam is not None else None,
                'pose_adam': state.pose_adam.to_json()},
               os.path.join(path, "train_state.json"))


def load_training_checkpoint(path, scene=None):
    """\
    Reads a checkpoint directory written by save_training_checkpoint().

    :param path: checkpoint directory
    :param scene: AnalyticScene, needed to restore oracle-mode checkpoints
    :return: tuple of (TrainState, TrainConfig)

    """
    meta = read_json(os.path.join(path, "train_state.json"))
    config = TrainConfig.from_json(meta['config'])
    segments = [TrajectorySegment.from_json(obj) for obj in read_json(os.path.join(path, "segments.json"))]

    def _adam(prefix, obj):
        return AdamState(np.load(os.path.join(path, f"{prefix}_m.npy")),
                         np.load(os.path.join(path, f"{prefix}_v.npy")), **obj)

    if meta['field_source'] == "oracle":
        if scene is None:
            raise ConfigError("Restoring an oracle-mode checkpoint needs the dataset's analytic scene")
        fields, field_adam = (OracleField(scene, config.oracle_softness), None), None
    else:
        fine_path = os.path.join(path, "fine.ckpt")
        fields = (load_checkpoint(os.path.join(path, "coarse.ckpt")),
                  load_checkpoint(fine_path) if os.path.exists(fine_path) else None)
        field_adam = _adam("field_adam", meta['field_adam'])

    state = TrainState(fields, segments, field_adam, _adam("pose_adam", meta['pose_adam']),
                       meta['iteration'], meta['loss_history'])
    return state, config


def train(config, dataset, segments, out_dir=None):
    """\
    Runs the full optimization.

    :param config: TrainConfig
    :param dataset: Dataset
    :param segments: initial TrajectorySegments, one per image (e.g. from scenegen.perturb_poses)
    :param out_dir: optional output directory for checkpoints and metrics.csv
    :return: tuple of (final TrainState, pandas DataFrame with the metrics log)

    """
    config.validate()
    if len(segments) != len(dataset):
        raise ConfigError(f"Got {len(segments)} trajectory segments for {len(dataset)} images")

    state = TrainState.initialize(config, segments, scene=dataset.scene)
    rows = []
    start = time.monotonic()

    with MeasureExecution("Training"):
        while state.iteration < config.iterations:
            iteration = state.iteration
            lr_field = lr_at(iteration, config.iterations, config.lr_field_start, config.lr_field_end)
            lr_pose = lr_at(iteration, config.iterations, config.lr_pose_start, config.lr_pose_end)
            _, loss = train_step(state, dataset, config, out_dir=out_dir)

            elapsed = time.monotonic() - start
            rows.append({'iteration': iteration, 'loss': loss, 'lr_field': lr_field, 'lr_pose': lr_pose,
                         'wall_clock': elapsed})

            if iteration % config.log_every == 0 or state.iteration == config.iterations:
                LOGGER.info("Iteration %d/%d: loss=%.6g lr_field=%.3g lr_pose=%.3g (elapsed %s)",
                            iteration, config.iterations, loss, lr_field, lr_pose, humanize.naturaldelta(elapsed))

            if out_dir is not None and state.iteration % config.checkpoint_every == 0:
                save_training_checkpoint(state, config, os.path.join(out_dir, "checkpoint"))

    metrics = pd.DataFrame(rows, columns=['iteration', 'loss', 'lr_field', 'lr_pose', 'wall_clock'])
    if out_dir is not None:
        save_training_checkpoint(state, config, os.path.join(out_dir, "checkpoint"))
        metrics.to_csv(os.path.join(out_dir, "metrics.csv"), index=False)
    return state, metrics
