"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Central finite differences for checking hand-written gradients.

"""
import numpy as np

STEP = 1e-6


def numerical_gradient(func, x, step=STEP):
    """\
    Central finite-difference gradient of a scalar function.

    :param func: callable taking an array shaped like x and returning a scalar
    :param x: evaluation point
    :param step: finite difference step
    :return: array shaped like x

    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_grad = x.reshape(-1), grad.reshape(-1)
    for idx in range(flat_x.size):
        orig = flat_x[idx]
        flat_x[idx] = orig + step
        f_plus = func(x.copy())
        flat_x[idx] = orig - step
        f_minus = func(x.copy())
        flat_x[idx] = orig
        flat_grad[idx] = (f_plus - f_minus) / (2 * step)
    return grad


def relative_error(a, b, floor=1e-8):
    """``|a - b| / max(|a|, |b|, floor)``, using Euclidean norms over all entries"""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
