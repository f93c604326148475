"""SE(2) poses, 2x2 Gaussians and first-order covariance propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Rigid 2D transform. ``theta`` is always kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> Pose2:
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, v) -> Pose2:
        return cls(v[0], v[1], v[2])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose2:
        return cls(m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: Pose2) -> Pose2:
        return compose(self, other)

    def inverse(self) -> Pose2:
        return inverse(self)

    def __matmul__(self, other: Pose2) -> Pose2:
        return compose(self, other)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a (+) b``: ``b`` expressed in the frame of ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return compose(inverse(a), b)


def transform_point(p: Pose2, pt) -> np.ndarray:
    """Rotate ``pt`` by the pose heading, then translate.

    Accepts a single 2-vector or an ``(n, 2)`` array.
    """
    pt = np.asarray(pt, dtype=float)
    c, s = math.cos(p.theta), math.sin(p.theta)
    x, y = pt[..., 0], pt[..., 1]
    return np.stack([c * x - s * y + p.x, s * x + c * y + p.y], axis=-1)


def compose_jacobians(a: Pose2, b: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of ``compose(a, b)`` with respect to ``a`` and ``b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    ja = np.array([
        [1.0, 0.0, -s * b.x - c * b.y],
        [0.0, 1.0, c * b.x - s * b.y],
        [0.0, 0.0, 1.0],
    ])
    jb = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return ja, jb


def inverse_jacobian(p: Pose2) -> np.ndarray:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([
        [-c, -s, s * p.x - c * p.y],
        [s, -c, c * p.x + s * p.y],
        [0.0, 0.0, -1.0],
    ])


def compose_with_covariance(a: Pose2, cov_a, b: Pose2, cov_b) -> tuple[Pose2, np.ndarray]:
    """Compose two uncertain poses assuming independent errors (first order)."""
    ja, jb = compose_jacobians(a, b)
    cov = ja @ np.asarray(cov_a) @ ja.T + jb @ np.asarray(cov_b) @ jb.T
    return compose(a, b), symmetrize(cov)


def inverse_with_covariance(p: Pose2, cov) -> tuple[Pose2, np.ndarray]:
    j = inverse_jacobian(p)
    return inverse(p), symmetrize(j @ np.asarray(cov) @ j.T)


def point_jacobian(pose: Pose2, pt) -> np.ndarray:
    """d transform_point / d(x, y, theta), shape ``(..., 2, 3)``."""
    pt = np.asarray(pt, dtype=float)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    px, py = pt[..., 0], pt[..., 1]
    j = np.zeros(pt.shape[:-1] + (2, 3))
    j[..., 0, 0] = 1.0
    j[..., 1, 1] = 1.0
    j[..., 0, 2] = -s * px - c * py
    j[..., 1, 2] = c * px - s * py
    return j


def propagate_point_covariance(pose: Pose2, pose_cov, pt, pt_cov) -> np.ndarray:
    """Covariance of ``transform_point(pose, pt)`` under pose and point noise.

    First-order: ``R C R^T + J P J^T`` with ``J`` the Jacobian of the
    transform with respect to the pose. Vectorised over leading axes of
    ``pt``/``pt_cov``.
    """
    r = rotation(pose.theta)
    j = point_jacobian(pose, pt)
    pt_cov = np.asarray(pt_cov, dtype=float)
    out = r @ pt_cov @ r.T + j @ np.asarray(pose_cov, dtype=float) @ np.swapaxes(j, -1, -2)
    return symmetrize(out)


def polar_covariance(range_m, bearing, sigma_range: float, sigma_bearing: float) -> np.ndarray:
    """Cartesian covariance of polar measurements: ``G diag(sr^2, r^2 sa^2) G^T``."""
    range_m = np.asarray(range_m, dtype=float)
    bearing = np.asarray(bearing, dtype=float)
    c, s = np.cos(bearing), np.sin(bearing)
    var_r = sigma_range**2
    var_t = (range_m * sigma_bearing) ** 2
    cov = np.empty(range_m.shape + (2, 2))
    cov[..., 0, 0] = c * c * var_r + s * s * var_t
    cov[..., 1, 1] = s * s * var_r + c * c * var_t
    cov[..., 0, 1] = cov[..., 1, 0] = c * s * (var_r - var_t)
    return cov


@dataclass(frozen=True)
class Gaussian2:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(2))
        object.__setattr__(self, "cov", symmetrize(np.asarray(self.cov, dtype=float).reshape(2, 2)))

    @property
    def sigma_x(self) -> float:
        return math.sqrt(max(self.cov[0, 0], 0.0))

    @property
    def sigma_y(self) -> float:
        return math.sqrt(max(self.cov[1, 1], 0.0))

    def transformed(self, pose: Pose2, pose_cov=None) -> Gaussian2:
        pose_cov = np.zeros((3, 3)) if pose_cov is None else pose_cov
        return Gaussian2(transform_point(pose, self.mean),
                         propagate_point_covariance(pose, pose_cov, self.mean, self.cov))


def _sinc_terms(phi: float) -> tuple[float, float]:
    """``sin(phi)/phi`` and ``(1 - cos(phi))/phi`` with small-angle series."""
    if abs(phi) < 1e-4:
        return 1.0 - phi * phi / 6.0, phi / 2.0 - phi**3 / 24.0
    return math.sin(phi) / phi, (1.0 - math.cos(phi)) / phi


def exp_twist(dx: float, dy: float, dtheta: float) -> Pose2:
    """Pose reached by moving with a constant body twist whose integral is (dx, dy, dtheta)."""
    sa, ca = _sinc_terms(dtheta)
    return Pose2(dx * sa - dy * ca, dx * ca + dy * sa, dtheta)


def log_twist(p: Pose2) -> np.ndarray:
    """Inverse of :func:`exp_twist`."""
    sa, ca = _sinc_terms(p.theta)
    v = np.array([[sa, -ca], [ca, sa]])
    ab = np.linalg.solve(v, p.translation)
    return np.array([ab[0], ab[1], p.theta])
