"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Command-line entry point: dataset generation, training, rendering, evaluation and the virtual-image count
ablation.

"""
import inspect
import logging
import os
import sys
from argparse import ArgumentParser
from collections import OrderedDict

import numpy as np
import pandas as pd

from blurba import BlurbaError, ConfigError, DegenerateConfigurationError, __version__, assert_range
from blurba.blur_model import BlurConfig, TrajectorySegment, virtual_poses
from blurba.field import EncodingConfig, FieldConfig
from blurba.images import write_png, write_f32, comparison_strip
from blurba.lie import Pose
from blurba.metrics import ate, evaluate_frames
from blurba.optim import TrainConfig, train, load_training_checkpoint
from blurba.profile import MeasureExecution
from blurba.renderer import CameraIntrinsics, render_image
from blurba.scenegen import AnalyticScene, TrajectorySpec, generate_dataset, perturb_poses, read_dataset, \
    write_dataset
from blurba.utils import from_config_or_env, read_json, write_json
import blurba.profile

LOGGER = logging.getLogger(__name__)

ENV_PREFIX = "BLURBA_"


def parse_bool(val):
    """Parses booleans from JSON values, flags and environment variables"""
    if isinstance(val, bool):
        return val
    if str(val).strip().lower() in ("1", "true", "yes", "y", "on"):
        return True
    if str(val).strip().lower() in ("0", "false", "no", "n", "off", ""):
        return False
    raise ConfigError(f"Not a boolean: {val}")


def parse_int_list(val):
    """Parses a list of integers from a JSON list or a comma-separated string"""
    if isinstance(val, (list, tuple)):
        return [int(x) for x in val]
    return [int(x) for x in str(val).split(",") if x.strip() != ""]


def _optional_str(val):
    return None if val is None else str(val)


# name -> (parser, default)
RUN_FIELDS = OrderedDict([
    ('out', (str, "blurba_out")),
    ('dataset', (_optional_str, None)),
    ('checkpoint', (_optional_str, None)),
    ('scene', (lambda val: val, None)),
    ('seed', (int, 0)),
    ('threads', (int, 1)),
    ('log_level', (str, "INFO")),
    ('profile', (parse_bool, False)),
    # dataset generation
    ('n_frames', (int, 6)),
    ('n_synth', (int, 51)),
    ('quality', (int, 64)),
    ('width', (int, 32)),
    ('height', (int, 32)),
    ('fov', (float, 40.0)),
    ('near', (float, 0.5)),
    ('far', (float, 3.5)),
    ('trajectory_mode', (str, "random")),
    ('velocity_profile', (str, "constant")),
    ('translation_blur', (float, 0.05)),
    ('rotation_blur', (float, 3.0)),
    ('n_heldout', (int, 0)),
    # training
    ('iterations', (int, 5000)),
    ('rays_per_batch', (int, 512)),
    ('n_virtual', (int, 7)),
    ('n_coarse', (int, 32)),
    ('n_fine', (int, 32)),
    ('no_fine', (parse_bool, False)),
    ('deterministic_sampling', (parse_bool, False)),
    ('field_depth', (int, 4)),
    ('field_width', (int, 64)),
    ('l_pos', (int, 10)),
    ('l_dir', (int, 4)),
    ('field_source', (str, "learned")),
    ('lr_field_start', (float, 5e-4)),
    ('lr_field_end', (float, 5e-5)),
    ('lr_pose_start', (float, 1e-3)),
    ('lr_pose_end', (float, 1e-5)),
    ('perturb_rot', (float, 1.0)),
    ('perturb_trans', (float, 0.02)),
    ('log_every', (int, 100)),
    ('checkpoint_every', (int, 1000)),
    # rendering and ablation
    ('trajectory', (str, "mid")),
    ('poses', (_optional_str, None)),
    ('n_list', (parse_int_list, [2, 4, 7])),
])

TRAJECTORY_CHOICES = ("mid", "start", "end", "sequence", "heldout")


class RunConfig:
    """\
    Fully resolved settings of one command-line run.

    """
    def __init__(self, command, **kwargs):
        self.command = command
        unknown = set(kwargs) - set(RUN_FIELDS)
        if unknown:
            raise ConfigError(f"Unknown configuration fields: {', '.join(sorted(unknown))}")

        for name, (parser, default) in RUN_FIELDS.items():
            val = kwargs.get(name)
            try:
                setattr(self, name, default if val is None else parser(val))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value for {name}: {val!r}") from e

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        assert_range("threads", self.threads, min_val=1)
        assert_range("n_frames", self.n_frames, min_val=1)
        assert_range("n_synth", self.n_synth, min_val=2)
        assert_range("quality", self.quality, min_val=1)
        assert_range("perturb_rot", self.perturb_rot, min_val=0)
        assert_range("perturb_trans", self.perturb_trans, min_val=0)
        assert_range("n_heldout", self.n_heldout, min_val=0)
        if self.trajectory not in TRAJECTORY_CHOICES:
            raise ConfigError(f"trajectory must be one of {', '.join(TRAJECTORY_CHOICES)}, got {self.trajectory}")
        if self.poses is not None and not os.path.isfile(self.poses):
            raise ConfigError(f"Pose file does not exist: {self.poses}")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"Unknown log level: {self.log_level}")
        if self.command in ("train", "eval", "render", "ablate-nvirtual"):
            if self.dataset is None or not os.path.isdir(self.dataset):
                raise ConfigError(f"Dataset directory does not exist: {self.dataset}")
        if self.command in ("eval", "render"):
            if self.checkpoint is None or not os.path.isdir(self.checkpoint):
                raise ConfigError(f"Checkpoint directory does not exist: {self.checkpoint}")
        if self.command == "ablate-nvirtual":
            for n in self.n_list:
                BlurConfig(n).validate()

        self.trajectory_spec().validate()
        if self.command in ("train", "ablate-nvirtual"):
            self.train_config(near=self.near, far=self.far, background=(0.0, 0.0, 0.0)).validate()
        return self

    def trajectory_spec(self):
        """TrajectorySpec for dataset generation"""
        return TrajectorySpec(mode=self.trajectory_mode, profile=self.velocity_profile,
                              translation_blur=self.translation_blur, rotation_blur=self.rotation_blur)

    def train_config(self, near, far, background, n_virtual=None):
        """\
        TrainConfig for this run.

        :param near: near bound of the dataset
        :param far: far bound of the dataset
        :param background: background color of the dataset
        :param n_virtual: overrides the configured number of virtual images
        :return: TrainConfig

        """
        field = FieldConfig(depth=self.field_depth, width=self.field_width,
                            encoding=EncodingConfig(l_pos=self.l_pos, l_dir=self.l_dir), seed=self.seed)
        sampling = TrainConfig().sampling.copy(n_coarse=self.n_coarse, n_fine=self.n_fine, near=near, far=far,
                                               use_fine=not self.no_fine,
                                               stratified=not self.deterministic_sampling,
                                               background=list(background))
        return TrainConfig(iterations=self.iterations, rays_per_batch=self.rays_per_batch,
                           lr_field_start=self.lr_field_start, lr_field_end=self.lr_field_end,
                           lr_pose_start=self.lr_pose_start, lr_pose_end=self.lr_pose_end,
                           blur=BlurConfig(n_virtual or self.n_virtual), sampling=sampling, field=field,
                           seed=self.seed, threads=self.threads, log_every=self.log_every,
                           checkpoint_every=self.checkpoint_every, field_source=self.field_source)

    def to_json(self):
        """Serializes this config, including the subcommand"""
        obj = OrderedDict([('command', self.command)])
        for name in RUN_FIELDS:
            obj[name] = getattr(self, name)
        return obj

    @staticmethod
    def from_json(obj):
        """Parses a RunConfig from JSON primitives"""
        obj = dict(obj)
        return RunConfig(obj.pop('command', None), **obj)


def _collect(**kwargs):
    return kwargs


_collect.__signature__ = inspect.Signature(
    [inspect.Parameter(name, inspect.Parameter.KEYWORD_ONLY, default=None) for name in ['config'] + list(RUN_FIELDS)])

_resolve_values = from_config_or_env(ENV_PREFIX)(_collect)


def resolve_run_config(command, **flags):
    """\
    Resolves run settings. Priority (most important first): command-line flags, BLURBA_* environment
    variables, the --config JSON file, defaults.

    :param command: subcommand name
    :param flags: flag values; None means "not given"
    :return: validated RunConfig

    """
    values = _resolve_values(**flags)
    values.pop('config', None)
    values.pop('command', None)
    return RunConfig(command, **values).validate()


def _write_resolved(run, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_json(run.to_json(), os.path.join(out_dir, "resolved_config.json"))


def _scene(run):
    if run.scene is None:
        return AnalyticScene.default()
    if isinstance(run.scene, dict):
        return AnalyticScene.from_json(run.scene)
    return AnalyticScene.from_json(read_json(run.scene))


def cmd_generate(run):
    """Generates a synthetic dataset into run.out"""
    intrinsics = CameraIntrinsics.from_fov(run.width, run.height, run.fov)
    dataset = generate_dataset(_scene(run), run.trajectory_spec(), run.n_frames, n_synth=run.n_synth,
                               seed=run.seed, intrinsics=intrinsics, quality=run.quality, near=run.near,
                               far=run.far, threads=run.threads, n_heldout=run.n_heldout)
    write_dataset(dataset, run.out)
    _write_resolved(run, run.out)
    return dataset


def _train_into(run, dataset, out_dir, n_virtual=None):
    config = run.train_config(dataset.near, dataset.far, dataset.scene.background, n_virtual=n_virtual)
    segments = perturb_poses(dataset, np.radians(run.perturb_rot), run.perturb_trans, run.seed)
    os.makedirs(out_dir, exist_ok=True)
    write_json([seg.to_json() for seg in segments], os.path.join(out_dir, "initial_segments.json"))
    return train(config, dataset, segments, out_dir=out_dir)


def cmd_train(run):
    """Trains on run.dataset, writing checkpoints and metrics.csv into run.out"""
    dataset = read_dataset(run.dataset)
    _write_resolved(run, run.out)
    return _train_into(run, dataset, run.out)


def _load(run):
    dataset = read_dataset(run.dataset)
    state, config = load_training_checkpoint(run.checkpoint, scene=dataset.scene)
    if len(state.segments) != len(dataset):
        raise ConfigError(f"Checkpoint has {len(state.segments)} segments, dataset has {len(dataset)} frames")
    sampling = config.sampling.copy(stratified=False)
    return dataset, state, config, sampling


def _trajectory_poses(seg, trajectory, n_virtual):
    if trajectory == "start":
        return [("start", seg.pose_start)]
    elif trajectory == "end":
        return [("end", seg.pose_end)]
    elif trajectory == "sequence":
        return [(f"v{idx:02d}", pose) for idx, pose in enumerate(virtual_poses(seg, n_virtual))]
    return [("mid", seg.pose_mid)]


def read_pose_list(path):
    """\
    Reads camera-to-world poses from a JSON list of row-major 4x4 matrices.

    :param path: JSON file
    :return: list of Poses

    """
    obj = read_json(path)
    if not isinstance(obj, list):
        raise ConfigError(f"{path} must hold a list of 4x4 matrices")
    try:
        return [Pose.from_json(matrix) for matrix in obj]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path} must hold a list of 4x4 matrices") from e


def _render_targets(run, dataset, state, n_virtual):
    if run.poses is not None:
        return [(f"pose_{idx:04d}", pose) for idx, pose in enumerate(read_pose_list(run.poses))]
    if run.trajectory == "heldout":
        if not dataset.heldout:
            raise ConfigError(f"Dataset {run.dataset} has no held-out views")
        return [(f"heldout_{idx:04d}", view.pose) for idx, view in enumerate(dataset.heldout)]
    return [(f"{idx:04d}_{label}", pose) for idx, seg in enumerate(state.segments)
            for label, pose in _trajectory_poses(seg, run.trajectory, n_virtual)]


def cmd_render(run):
    """\
    Renders every frame of the checkpoint at the requested point(s) of its exposure, the dataset's held-out
    views, or an explicit list of poses (--poses)

    """
    dataset, state, config, sampling = _load(run)
    os.makedirs(run.out, exist_ok=True)
    rendered = {}
    for label, pose in _render_targets(run, dataset, state, config.blur.n_virtual):
        image = render_image(state.render_fields, dataset.intrinsics, pose, sampling, threads=run.threads)
        write_f32(os.path.join(run.out, f"render_{label}.f32"), image)
        write_png(os.path.join(run.out, f"render_{label}.png"), image)
        rendered[label] = image
    _write_resolved(run, run.out)
    return rendered


def _ate_or_none(estimated, reference):
    try:
        return ate(estimated, reference).to_json()
    except DegenerateConfigurationError as e:
        LOGGER.warning("Skipping ATE: %s", e)
        return None


def evaluate_checkpoint(dataset, state, sampling, threads=1, strip_dir=None):
    """\
    Renders mid-exposure images of every frame and compares them against ground truth. Held-out views, if
    the dataset has any, are rendered at their ground truth poses and reported under 'novel_view'.

    :param dataset: Dataset
    :param state: TrainState
    :param sampling: SamplingConfig (deterministic)
    :param threads: worker threads
    :param strip_dir: optional directory for blurry | rendered | sharp comparison strips
    :return: JSON-serializable report

    """
    rendered = [render_image(state.render_fields, dataset.intrinsics, seg.pose_mid, sampling, threads=threads)
                for seg in state.segments]
    sharp = [frame.sharp for frame in dataset.frames]
    blurry = [frame.blurry for frame in dataset.frames]
    report = evaluate_frames(rendered, sharp, blurry)
    report['ate'] = _ate_or_none([seg.pose_mid for seg in state.segments],
                                 [frame.pose_mid for frame in dataset.frames])
    report['iteration'] = state.iteration

    novel = [render_image(state.render_fields, dataset.intrinsics, view.pose, sampling, threads=threads)
             for view in dataset.heldout]
    if novel:
        report['novel_view'] = evaluate_frames(novel, [view.sharp for view in dataset.heldout])

    if strip_dir is not None:
        os.makedirs(strip_dir, exist_ok=True)
        for idx, (blur_img, render_img, sharp_img) in enumerate(zip(blurry, rendered, sharp)):
            comparison_strip(os.path.join(strip_dir, f"strip_{idx:04d}.png"), blur_img, render_img, sharp_img)
        for idx, (render_img, view) in enumerate(zip(novel, dataset.heldout)):
            comparison_strip(os.path.join(strip_dir, f"heldout_{idx:04d}.png"), render_img, view.sharp)
    return report


def cmd_eval(run):
    """Evaluates a checkpoint against the dataset's ground truth, writing metrics.json into run.out"""
    dataset, state, _, sampling = _load(run)
    with MeasureExecution("Evaluation"):
        report = evaluate_checkpoint(dataset, state, sampling, threads=run.threads,
                                     strip_dir=os.path.join(run.out, "strips"))

    initial_path = os.path.join(os.path.dirname(os.path.abspath(run.checkpoint)), "initial_segments.json")
    if os.path.exists(initial_path):
        initial = [TrajectorySegment.from_json(obj) for obj in read_json(initial_path)]
        report['initial_ate'] = _ate_or_none([seg.pose_mid for seg in initial],
                                             [frame.pose_mid for frame in dataset.frames])

    LOGGER.info("Mean PSNR %.2f dB (blurry inputs %.2f dB), mean SSIM %.4f", report['mean_psnr'],
                report['mean_blurry_psnr'], report['mean_ssim'])
    if 'novel_view' in report:
        LOGGER.info("Novel views: mean PSNR %.2f dB, mean SSIM %.4f", report['novel_view']['mean_psnr'],
                    report['novel_view']['mean_ssim'])
    write_json(report, os.path.join(run.out, "metrics.json"))
    _write_resolved(run, run.out)
    return report


def plot_ablation(table, path):
    """Plots mean PSNR against the number of virtual images"""
    import matplotlib  # pylint: disable=import-outside-toplevel
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt  # pylint: disable=import-outside-toplevel

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(table['n_virtual'], table['mean_psnr'], marker='o', label='rendered')
    ax.plot(table['n_virtual'], table['mean_blurry_psnr'], linestyle='--', label='blurry input')
    ax.set_xlabel("Virtual images per exposure")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_ablate_nvirtual(run):
    """Trains and evaluates once per requested number of virtual images, writing ablation.csv/png"""
    dataset = read_dataset(run.dataset)
    _write_resolved(run, run.out)
    rows = []
    for n in run.n_list:
        out_dir = os.path.join(run.out, f"n_virtual_{n:02d}")
        state, metrics = _train_into(run, dataset, out_dir, n_virtual=n)
        config = run.train_config(dataset.near, dataset.far, dataset.scene.background, n_virtual=n)
        report = evaluate_checkpoint(dataset, state, config.sampling.copy(stratified=False), threads=run.threads)
        write_json(report, os.path.join(out_dir, "metrics.json"))
        rows.append({'n_virtual': n,
                     'mean_psnr': report['mean_psnr'],
                     'mean_ssim': report['mean_ssim'],
                     'mean_blurry_psnr': report['mean_blurry_psnr'],
                     'ate_rmse': report['ate']['rmse'] if report['ate'] else float('nan'),
                     'final_loss': float(metrics['loss'].iloc[-1]) if len(metrics) else float('nan')})
        LOGGER.info("n_virtual=%d: mean PSNR %.2f dB", n, report['mean_psnr'])

    table = pd.DataFrame(rows)
    table.to_csv(os.path.join(run.out, "ablation.csv"), index=False)
    plot_ablation(table, os.path.join(run.out, "ablation.png"))
    return table


COMMANDS = OrderedDict([
    ('generate', cmd_generate),
    ('train', cmd_train),
    ('render', cmd_render),
    ('eval', cmd_eval),
    ('ablate-nvirtual', cmd_ablate_nvirtual),
])


def _add_common_arguments(parser):
    parser.add_argument("--config", help="JSON file with run settings")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--seed", type=int, help="Seed for every random choice of the run")
    parser.add_argument("--threads", type=int, help="Maximum worker threads. Results don't depend on it.")
    parser.add_argument("--log-level", dest="log_level", help="Logging level, e.g. DEBUG or INFO")
    parser.add_argument("--profile", action='store_const', const=True,
                        help="Log durations of long-running phases")
    parser.add_argument("--dataset", help="Dataset directory")


def _add_train_arguments(parser):
    parser.add_argument("--n-virtual", dest="n_virtual", type=int, help="Virtual images per blurry image")
    parser.add_argument("--iterations", type=int, help="Optimization steps")
    parser.add_argument("--rays-per-batch", dest="rays_per_batch", type=int, help="Pixels per batch")
    parser.add_argument("--perturb-rot", dest="perturb_rot", type=float,
                        help="Standard deviation of initial pose rotation noise, degrees")
    parser.add_argument("--perturb-trans", dest="perturb_trans", type=float,
                        help="Standard deviation of initial pose translation noise, scene units")
    parser.add_argument("--no-fine", dest="no_fine", action='store_const', const=True,
                        help="Use only the coarse network")
    parser.add_argument("--field-source", dest="field_source", choices=["learned", "oracle"],
                        help="Optimize a radiance field (learned), or poses only against the analytic scene")


def build_parser():
    """Creates the argument parser"""
    parser = ArgumentParser(prog="blurba",
                            description="Radiance fields and exposure trajectories from motion-blurred images")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("generate", help="Generate a synthetic blurry dataset")
    _add_common_arguments(gen)
    gen.add_argument("--n-frames", dest="n_frames", type=int, help="Number of frames")
    gen.add_argument("--n-synth", dest="n_synth", type=int, help="Virtual images averaged into each frame")
    gen.add_argument("--quality", type=int, help="Oracle samples per ray")
    gen.add_argument("--trajectory-mode", dest="trajectory_mode", choices=["random", "chain"])
    gen.add_argument("--velocity-profile", dest="velocity_profile", choices=["constant", "accelerating"])
    gen.add_argument("--translation-blur", dest="translation_blur", type=float,
                     help="Translation during an exposure, as a fraction of the scene diameter")
    gen.add_argument("--rotation-blur", dest="rotation_blur", type=float, help="Rotation during an exposure, degrees")
    gen.add_argument("--n-heldout", dest="n_heldout", type=int,
                     help="Sharp views at extra poses, kept out of training for novel-view evaluation")

    train_parser = subparsers.add_parser("train", help="Jointly optimize the field and exposure trajectories")
    _add_common_arguments(train_parser)
    _add_train_arguments(train_parser)

    for name, description in (("render", "Render frames from a checkpoint"),
                              ("eval", "Evaluate a checkpoint against ground truth")):
        sub = subparsers.add_parser(name, help=description)
        _add_common_arguments(sub)
        sub.add_argument("--checkpoint", help="Checkpoint directory written by train")
        if name == "render":
            sub.add_argument("--trajectory", choices=list(TRAJECTORY_CHOICES),
                             help="Point(s) of each exposure to render, or the dataset's held-out views")
            sub.add_argument("--poses", help="JSON list of 4x4 camera-to-world matrices to render instead")

    ablate = subparsers.add_parser("ablate-nvirtual", help="Sweep the number of virtual images")
    _add_common_arguments(ablate)
    _add_train_arguments(ablate)
    ablate.add_argument("--n-list", dest="n_list", help="Comma-separated virtual image counts, e.g. 2,4,7")

    return parser


def main(argv=None):
    """\
    Main entry point

    :param argv: command-line arguments (defaults to sys.argv)
    :return: exit code: 0 on success, 2 on errors
    """
    args = build_parser().parse_args(argv)
    flags = {key: val for key, val in vars(args).items() if key != "command"}

    try:
        run = resolve_run_config(args.command, **flags)
    except BlurbaError as e:
        logging.basicConfig(level=logging.INFO)
        LOGGER.error("%s: %s", type(e).__name__, e)
        return 2

    logging.basicConfig(level=getattr(logging, run.log_level.upper()),
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    blurba.profile.ENABLED = run.profile

    try:
        COMMANDS[run.command](run)
    except BlurbaError as e:
        LOGGER.error("%s: %s", type(e).__name__, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
