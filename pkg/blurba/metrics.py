"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Image quality (PSNR, SSIM) and trajectory accuracy (ATE after similarity alignment).

"""
import numpy as np
from scipy.signal import convolve2d

from blurba import DimensionMismatchError, TooSmallError, DegenerateConfigurationError
from blurba.images import luma

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_dimensions(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_value=1.0):
    """\
    Peak signal-to-noise ratio, in dB.

    :param a: ImageBuffer
    :param b: ImageBuffer of the same dimensions
    :param max_value: peak signal value
    :return: PSNR in dB, capped at PSNR_CAP (returned for identical images)

    """
    a, b = _check_dimensions(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(max_value ** 2 / mse)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2D Gaussian window"""
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-coords ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, max_value=1.0):
    """\
    Mean structural similarity of the Rec. 601 luma channels, with an 11x11 Gaussian window (sigma 1.5),
    evaluated at every position where the window fits entirely inside the image.

    :param a: ImageBuffer (H, W, 3), or a single-channel (H, W) image
    :param b: image of the same dimensions
    :param max_value: dynamic range
    :return: SSIM in [-1, 1]

    """
    a, b = _check_dimensions(a, b)
    if a.ndim == 3:
        a, b = luma(a), luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise TooSmallError(f"SSIM needs images at least {SSIM_WINDOW} pixels on a side, got {a.shape}")

    window = gaussian_window()

    def _filter(x):
        return convolve2d(x, window, mode='valid')

    c1 = (SSIM_K1 * max_value) ** 2
    c2 = (SSIM_K2 * max_value) ** 2
    mu_a, mu_b = _filter(a), _filter(b)
    var_a = _filter(a * a) - mu_a ** 2
    var_b = _filter(b * b) - mu_b ** 2
    cov = _filter(a * b) - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


class AteReport:
    """\
    Absolute trajectory error after similarity alignment of estimated positions to ground truth.

    """
    # pylint: disable=too-many-arguments,redefined-builtin
    def __init__(self, rmse, mean, median, max, rotation, translation, scale, residuals):
        self.rmse = rmse
        self.mean = mean
        self.median = median
        self.max = max
        self.rotation = rotation
        self.translation = translation
        self.scale = scale
        self.residuals = residuals

    def to_json(self):
        """Serializes this report to JSON primitives"""
        return {'rmse': self.rmse, 'mean': self.mean, 'median': self.median, 'max': self.max,
                'alignment': {'rotation': np.asarray(self.rotation).tolist(),
                              'translation': np.asarray(self.translation).tolist(),
                              'scale': self.scale},
                'residuals': np.asarray(self.residuals).tolist()}

    @staticmethod
    def from_json(obj):
        """Parses a report from JSON primitives"""
        alignment = obj['alignment']
        return AteReport(obj['rmse'], obj['mean'], obj['median'], obj['max'], np.array(alignment['rotation']),
                         np.array(alignment['translation']), alignment['scale'], np.array(obj['residuals']))

    def __repr__(self):
        return f"AteReport(rmse={self.rmse:.6g}, mean={self.mean:.6g}, scale={self.scale:.6g})"


def align_similarity(source, target):
    """\
    Closed-form least-squares similarity transform (rotation, translation, scale) mapping source points onto
    target points: ``target ~= scale * rotation @ source + translation``.

    :param source: array (N, 3)
    :param target: array (N, 3)
    :return: tuple of (rotation 3x3, translation 3-vector, scale)

    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    src, tgt = source - mu_s, target - mu_t

    var_s = np.mean(np.sum(src ** 2, axis=1))
    cov = tgt.T @ src / len(source)
    u_mat, singular, vt_mat = np.linalg.svd(cov)

    sign = np.eye(3)
    if np.linalg.det(u_mat) * np.linalg.det(vt_mat) < 0:
        sign[2, 2] = -1.0

    rotation = u_mat @ sign @ vt_mat
    scale = float(np.trace(np.diag(singular) @ sign) / var_s)
    translation = mu_t - scale * rotation @ mu_s
    return rotation, translation, scale


def _is_degenerate(points):
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    return singular[0] <= 1e-12 or singular[1] <= 1e-9 * singular[0]


def ate(estimated, ground_truth):
    """\
    Absolute trajectory error of mid-exposure poses. Estimated camera centers are aligned to ground truth
    with a similarity transform before computing translation residuals.

    :param estimated: list of estimated Poses
    :param ground_truth: list of ground truth Poses, same length, at least 3, not collinear
    :return: AteReport

    """
    if len(estimated) != len(ground_truth):
        raise DimensionMismatchError(f"Got {len(estimated)} estimated and {len(ground_truth)} reference poses")
    if len(estimated) < 3:
        raise DegenerateConfigurationError("ATE alignment needs at least 3 poses")

    est = np.array([pose.translation for pose in estimated])
    ref = np.array([pose.translation for pose in ground_truth])
    if _is_degenerate(ref) or _is_degenerate(est):
        raise DegenerateConfigurationError("Camera positions are collinear: the alignment is not unique")

    rotation, translation, scale = align_similarity(est, ref)
    aligned = scale * est @ rotation.T + translation
    residuals = np.linalg.norm(aligned - ref, axis=1)
    return AteReport(rmse=float(np.sqrt(np.mean(residuals ** 2))),
                     mean=float(np.mean(residuals)),
                     median=float(np.median(residuals)),
                     max=float(np.max(residuals)),
                     rotation=rotation, translation=translation, scale=scale, residuals=residuals)


def evaluate_frames(rendered, sharp, blurry=None):
    """\
    Per-frame and aggregate image quality.

    :param rendered: list of rendered ImageBuffers
    :param sharp: list of ground truth sharp ImageBuffers
    :param blurry: optional list of blurry inputs, evaluated against sharp as a baseline
    :return: JSON-serializable report

    """
    if len(rendered) != len(sharp) or (blurry is not None and len(blurry) != len(sharp)):
        raise DimensionMismatchError("Frame lists have different lengths")

    frames = []
    for idx, (img, ref) in enumerate(zip(rendered, sharp)):
        entry = {'index': idx, 'psnr': psnr(img, ref), 'ssim': ssim(img, ref)}
        if blurry is not None:
            entry['blurry_psnr'] = psnr(blurry[idx], ref)
            entry['blurry_ssim'] = ssim(blurry[idx], ref)
        frames.append(entry)

    report = {'ssim_channel': 'luma',
              'psnr_cap': PSNR_CAP,
              'frames': frames,
              'mean_psnr': float(np.mean([f['psnr'] for f in frames])),
              'mean_ssim': float(np.mean([f['ssim'] for f in frames]))}
    if blurry is not None:
        report['mean_blurry_psnr'] = float(np.mean([f['blurry_psnr'] for f in frames]))
        report['mean_blurry_ssim'] = float(np.mean([f['blurry_ssim'] for f in frames]))
    return report
