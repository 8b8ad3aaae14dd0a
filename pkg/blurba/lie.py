"""\
Copyright (c) 2026, blurba developers
All rights reserved.

SE(3)/SO(3) Lie-group math: exponential and logarithm maps, composition, inversion, linear interpolation
in the Lie algebra and analytic gradients of interpolated poses w.r.t. endpoint twists.

Conventions, used everywhere in blurba:

* A twist is a 6-vector ``[rho; phi]``: translational components first, rotational last.
* A pose maps camera coordinates to world coordinates: ``x_world = R @ x_cam + t``.
* Optimised poses live in a left chart around a fixed initial pose: ``T = se3_exp(xi) @ T_init``.
* Pose gradients are expressed w.r.t. a left perturbation ``T <- se3_exp(delta) @ T``.

"""
import numpy as np

from blurba import AngleNearPiError

# Below this angle Rodrigues' formula and the V matrix switch to a 2-term Taylor series
SMALL_ANGLE = 1e-8

# Below this angle the higher-order Jacobian coefficients switch to Taylor series (cancellation otherwise)
SERIES_ANGLE = 1e-2

# The logarithm map is only unique for rotation angles strictly below this value
MAX_LOG_ANGLE = np.pi - 1e-6


class Pose:
    """\
    Rigid transform from camera to world coordinates. Instances are immutable.

    """
    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        """\

        :param rotation: 3x3 rotation matrix
        :param translation: 3-vector, scene units
        """
        rotation = np.array(rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    def __setattr__(self, key, value):
        raise AttributeError("Pose is immutable")

    @staticmethod
    def identity():
        """Returns the identity pose"""
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix):
        """\
        Parses a pose from a 4x4 homogeneous matrix (nested lists or an array, row-major).

        :param matrix: 4x4 matrix
        :return: Pose instance

        """
        matrix = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return Pose(matrix[:3, :3], matrix[:3, 3])

    def to_matrix(self):
        """Converts this pose to a 4x4 homogeneous matrix"""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def to_json(self):
        """Serializes this pose as a row-major 4x4 nested list"""
        return self.to_matrix().tolist()

    @staticmethod
    def from_json(obj):
        """Parses a pose from its JSON representation (see to_json)"""
        return Pose.from_matrix(obj)

    @staticmethod
    def look_at(eye, target, up=(0.0, 0.0, 1.0)):
        """\
        Creates a camera pose at ``eye`` looking at ``target``. The camera looks down its +z axis, with +y
        pointing down in the image (the usual pinhole convention).

        :param eye: camera center in world coordinates
        :param target: point the camera looks at
        :param up: approximate world up direction
        :return: Pose instance

        """
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        forward = target - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        return Pose(np.stack([right, down, forward], axis=1), eye)

    def apply(self, points):
        """\
        Transforms points from camera to world coordinates.

        :param points: array of shape (..., 3)
        :return: transformed points, same shape

        """
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return compose(self, other)

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.rotation, other.rotation) \
            and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def hat(v):
    """Skew-symmetric matrix of a 3-vector, such that hat(a) @ b == cross(a, b)"""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def vee(m):
    """Inverse of hat(): extracts the 3-vector from a skew-symmetric matrix"""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _rodrigues_coefficients(theta):
    """Returns (sin(t)/t, (1-cos(t))/t^2, (t-sin(t))/t^3)"""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    return sin_t / theta, (1.0 - cos_t) / (theta * theta), (theta - sin_t) / theta ** 3


def so3_exp(phi):
    """\
    Exponential map of SO(3) (Rodrigues' formula).

    :param phi: rotation vector (axis * angle, radians)
    :return: 3x3 rotation matrix

    """
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    phi_x = hat(phi)
    a, b, _ = _rodrigues_coefficients(theta)
    return np.eye(3) + a * phi_x + b * (phi_x @ phi_x)


def so3_log(rotation):
    """\
    Logarithm map of SO(3).

    :param rotation: 3x3 rotation matrix
    :return: rotation vector phi with |phi| < pi - 1e-6

    """
    rotation = np.asarray(rotation, dtype=np.float64)
    cos_theta = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    w = 0.5 * vee(rotation - rotation.T)
    sin_theta = np.linalg.norm(w)
    theta = np.arctan2(sin_theta, cos_theta)

    if theta >= MAX_LOG_ANGLE:
        raise AngleNearPiError(f"Rotation angle {theta:.9f} is too close to pi for a unique logarithm")

    if theta < SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / sin_theta)


def so3_left_jacobian(phi):
    """Left Jacobian of SO(3), which is also the V matrix of the SE(3) exponential"""
    phi = np.asarray(phi, dtype=np.float64)
    phi_x = hat(phi)
    _, b, c = _rodrigues_coefficients(np.linalg.norm(phi))
    return np.eye(3) + b * phi_x + c * (phi_x @ phi_x)


def so3_left_jacobian_inverse(phi):
    """Inverse of so3_left_jacobian()"""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    phi_x = hat(phi)

    if theta < SERIES_ANGLE:
        t2 = theta * theta
        coeff = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coeff = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)

    return np.eye(3) - 0.5 * phi_x + coeff * (phi_x @ phi_x)


def _q_matrix(rho, phi):
    """Off-diagonal block of the SE(3) left Jacobian"""
    theta = np.linalg.norm(phi)
    rho_x, phi_x = hat(rho), hat(phi)

    pr = phi_x @ rho_x
    rp = rho_x @ phi_x
    prp = pr @ phi_x
    ppr = phi_x @ pr
    rpp = rp @ phi_x
    prpp = prp @ phi_x
    pprp = phi_x @ prp

    if theta < SERIES_ANGLE:
        t2 = theta * theta
        t4 = t2 * t2
        c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0
    else:
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        c1 = (theta - sin_t) / theta ** 3
        c2 = (theta * theta + 2.0 * cos_t - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * sin_t + theta * cos_t) / (2.0 * theta ** 5)

    return 0.5 * rho_x + c1 * (pr + rp + prp) + c2 * (ppr + rpp - 3.0 * prp) + c3 * (prpp + pprp)


def se3_left_jacobian(xi):
    """\
    Left Jacobian of SE(3): ``se3_exp(xi + d) ~= se3_exp(J @ d) @ se3_exp(xi)`` to first order.

    :param xi: twist [rho; phi]
    :return: 6x6 matrix

    """
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    jac = so3_left_jacobian(phi)

    result = np.zeros((6, 6))
    result[:3, :3] = jac
    result[3:, 3:] = jac
    result[:3, 3:] = _q_matrix(rho, phi)
    return result


def se3_left_jacobian_inverse(xi):
    """Inverse of se3_left_jacobian(), computed blockwise"""
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    jac_inv = so3_left_jacobian_inverse(phi)

    result = np.zeros((6, 6))
    result[:3, :3] = jac_inv
    result[3:, 3:] = jac_inv
    result[:3, 3:] = -jac_inv @ _q_matrix(rho, phi) @ jac_inv
    return result


def adjoint(pose):
    """\
    Adjoint of a pose, such that ``T @ se3_exp(xi) @ inverse(T) == se3_exp(adjoint(T) @ xi)``.

    :param pose: Pose
    :return: 6x6 matrix

    """
    result = np.zeros((6, 6))
    result[:3, :3] = pose.rotation
    result[3:, 3:] = pose.rotation
    result[:3, 3:] = hat(pose.translation) @ pose.rotation
    return result


def se3_exp(xi):
    """\
    Exponential map of SE(3).

    :param xi: twist [rho; phi]
    :return: Pose

    """
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    return Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(pose):
    """\
    Logarithm map of SE(3).

    :param pose: Pose whose rotation angle is below pi - 1e-6
    :return: twist [rho; phi]

    """
    phi = so3_log(pose.rotation)
    rho = so3_left_jacobian_inverse(phi) @ pose.translation
    return np.concatenate([rho, phi])


def compose(a, b):
    """Composes two poses: the result applied to x equals a.apply(b.apply(x))"""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(pose):
    """Inverts a pose"""
    rot_t = pose.rotation.T
    return Pose(rot_t, -rot_t @ pose.translation)


def pose_distance(a, b):
    """Frobenius norm of the difference between the 4x4 matrices of two poses"""
    return float(np.linalg.norm(a.to_matrix() - b.to_matrix()))


def realize(xi, pose_init):
    """Realizes a pose from its chart: se3_exp(xi) @ pose_init"""
    return compose(se3_exp(xi), pose_init)


def interpolate(pose_start, pose_end, u):
    """\
    Linearly interpolates two poses in the Lie algebra: ``T_start @ exp(u * log(inverse(T_start) @ T_end))``.

    :param pose_start: pose at u=0
    :param pose_end: pose at u=1
    :param u: interpolation parameter in [0, 1]
    :return: interpolated Pose. u=0 and identical endpoints return pose_start itself.

    """
    if u == 0 or pose_start == pose_end:
        return pose_start

    relative = se3_log(compose(inverse(pose_start), pose_end))
    return compose(pose_start, se3_exp(u * relative))


def interpolation_jacobian(pose_start, pose_end, u):
    """\
    Computes the 6x6 matrix M such that a left perturbation of the interpolated pose equals
    ``(I - M) @ delta_start + M @ delta_end``, to first order, where delta_start/delta_end are left
    perturbations of the endpoints.

    :param pose_start: pose at u=0
    :param pose_end: pose at u=1
    :param u: interpolation parameter in [0, 1]
    :return: 6x6 matrix

    """
    if u == 0:
        return np.zeros((6, 6))

    relative = se3_log(compose(inverse(pose_start), pose_end))
    ad = adjoint(pose_start)
    ad_inv = adjoint(inverse(pose_start))
    return u * ad @ se3_left_jacobian(u * relative) @ se3_left_jacobian_inverse(relative) @ ad_inv


def pose_gradient(xi_start, xi_end, u, upstream, start_init=None, end_init=None):
    """\
    Back-propagates a pose gradient through linear interpolation to the twists of both endpoints.

    :param xi_start: twist of the start pose, in the chart around start_init
    :param xi_end: twist of the end pose, in the chart around end_init
    :param u: interpolation parameter in [0, 1]
    :param upstream: 6-vector gradient of a scalar loss w.r.t. a left perturbation of the interpolated pose, \
    e.g. from twist_gradient_from_points() or twist_gradient_from_rays()
    :param start_init: chart origin of the start pose. Identity if None.
    :param end_init: chart origin of the end pose. Identity if None.
    :return: tuple of (grad_xi_start, grad_xi_end), each a 6-vector

    """
    start_init = start_init if start_init is not None else Pose.identity()
    end_init = end_init if end_init is not None else Pose.identity()
    upstream = np.asarray(upstream, dtype=np.float64)

    pose_start = realize(xi_start, start_init)
    pose_end = realize(xi_end, end_init)
    mix = interpolation_jacobian(pose_start, pose_end, u)

    grad_start = se3_left_jacobian(xi_start).T @ ((np.eye(6) - mix).T @ upstream)
    grad_end = se3_left_jacobian(xi_end).T @ (mix.T @ upstream)
    return grad_start, grad_end


def twist_gradient_from_points(points_world, grad_points):
    """\
    Converts gradients w.r.t. world-space points produced by a pose into the gradient w.r.t. a left
    perturbation of that pose.

    :param points_world: array (..., 3) of transformed points
    :param grad_points: array (..., 3) of loss gradients w.r.t. those points
    :return: 6-vector [rho; phi] gradient

    """
    points_world = np.asarray(points_world).reshape(-1, 3)
    grad_points = np.asarray(grad_points).reshape(-1, 3)
    return np.concatenate([grad_points.sum(axis=0),
                           np.cross(points_world, grad_points).sum(axis=0)])


def twist_gradient_from_rays(origins, directions, grad_origins, grad_directions):
    """\
    Converts gradients w.r.t. ray origins and world directions generated by a pose into the gradient
    w.r.t. a left perturbation of that pose. Origins move like points, directions only rotate.

    :param origins: array (N, 3)
    :param directions: array (N, 3)
    :param grad_origins: array (N, 3)
    :param grad_directions: array (N, 3)
    :return: 6-vector [rho; phi] gradient

    """
    origins = np.asarray(origins).reshape(-1, 3)
    directions = np.asarray(directions).reshape(-1, 3)
    grad_origins = np.asarray(grad_origins).reshape(-1, 3)
    grad_directions = np.asarray(grad_directions).reshape(-1, 3)
    grad_phi = np.cross(origins, grad_origins).sum(axis=0) + np.cross(directions, grad_directions).sum(axis=0)
    return np.concatenate([grad_origins.sum(axis=0), grad_phi])
