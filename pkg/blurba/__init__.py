"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Joint optimisation of a small radiance field and per-image exposure trajectories from motion-blurred images.

"""
import logging

import numpy as np

LOGGER = logging.getLogger(__name__)

__version__ = "0.1.0"


class BlurbaError(RuntimeError):
    """\
    Base class for all errors raised by blurba.
    """
    pass


class AngleNearPiError(BlurbaError, ValueError):
    """\
    Thrown if a relative rotation is too close to pi for the logarithm map to be unique.
    """
    pass


class NonFiniteParamsError(BlurbaError, ValueError):
    """\
    Thrown if radiance field parameters contain NaN or Inf.
    """
    pass


class NonFiniteLossError(BlurbaError):
    """\
    Thrown by the trainer if the photometric loss becomes NaN or Inf.
    """
    pass


class ShapeMismatchError(BlurbaError, ValueError):
    """\
    Thrown if parameter, gradient or optimizer state shapes disagree.
    """
    pass


class DimensionMismatchError(BlurbaError, ValueError):
    """\
    Thrown if two images passed to a metric have different dimensions.
    """
    pass


class TooSmallError(BlurbaError, ValueError):
    """\
    Thrown if an image is too small for the requested metric window.
    """
    pass


class DegenerateConfigurationError(BlurbaError, ValueError):
    """\
    Thrown if a trajectory alignment problem has no unique solution, e.g. collinear positions.
    """
    pass


class VersionError(BlurbaError):
    """\
    Thrown when reading a dataset or checkpoint written with an unsupported schema version.
    """
    pass


class ConfigError(BlurbaError, ValueError):
    """\
    Thrown if a configuration field is missing or out of range.
    """
    pass


def assert_finite(values, error_class=NonFiniteParamsError, what="values"):
    """\
    Asserts that all arrays are finite, raising error_class if not.

    :param values: an array or an iterable of arrays
    :param error_class: exception type to raise
    :param what: human-readable description for the error message
    :return: None

    """
    if isinstance(values, np.ndarray):
        values = [values]

    for val in values:
        if not np.all(np.isfinite(val)):
            raise error_class(f"Non-finite {what} encountered")


def assert_range(name, value, min_val=None, max_val=None):
    """\
    Checks that a numeric configuration value lies within [min_val, max_val].

    :param name: name of the field, for the error message
    :param value: value to check
    :param min_val: minimum acceptable value (inclusive), or None
    :param max_val: maximum acceptable value (inclusive), or None
    :return: the value, if it passes all checks. ConfigError otherwise.

    """
    if value is None:
        raise ConfigError(f"{name} is required")
    if min_val is not None and value < min_val:
        raise ConfigError(f"{name} must be >= {min_val}, got {value}")
    if max_val is not None and value > max_val:
        raise ConfigError(f"{name} must be <= {max_val}, got {value}")
    return value
