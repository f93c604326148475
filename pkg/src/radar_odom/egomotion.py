"""Instantaneous ego-velocity from Doppler returns (RANSAC + least squares)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from radar_odom.core import Pose2, exp_twist, symmetrize
from radar_odom.errors import InsufficientDoppler, InvalidEstimate
from radar_odom.ingest.formats import PointScan
from radar_odom.preprocess import PreprocessConfig

REFINE_ROUNDS = 5
STRAIGHT_LINE_OMEGA = 1e-9


def doppler_design_matrix(scan: PointScan, mounts: Sequence[Pose2]) -> np.ndarray:
    """Rows ``h_i`` with ``v_r,i = h_i . (v_x, v_y, omega)`` for a static world.

    A sensor mounted at ``(m_x, m_y, m_theta)`` moves with
    ``(v_x - omega m_y, v_y + omega m_x)``; the return is the negative
    projection of that onto the ray direction.
    """
    m = np.array([[mounts[s].x, mounts[s].y, mounts[s].theta] for s in scan.sensor_ids]).reshape(-1, 3)
    beta = scan.azimuths + m[:, 2]
    c, s = np.cos(beta), np.sin(beta)
    return -np.stack([c, s, s * m[:, 0] - c * m[:, 1]], axis=1)


@dataclass
class EgoVelocityEstimate:
    v: np.ndarray
    omega: float
    cov: np.ndarray
    inlier_count: int
    valid: bool
    mounts: list[Pose2] = field(default_factory=lambda: [Pose2()])
    inliers: np.ndarray | None = None

    @classmethod
    def invalid(cls, mounts: Sequence[Pose2] = (Pose2(),)) -> EgoVelocityEstimate:
        return cls(np.zeros(2), 0.0, np.zeros((3, 3)), 0, False, list(mounts))

    @property
    def twist(self) -> np.ndarray:
        return np.array([self.v[0], self.v[1], self.omega])

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.v))

    def predicted_radial_velocity(self, scan: PointScan) -> np.ndarray:
        return doppler_design_matrix(scan, self.mounts) @ self.twist


def estimate_ego_velocity(scan: PointScan, sensor_mounts: Sequence[Pose2] | None = None,
                          cfg: PreprocessConfig | None = None, seed: int = 0) -> EgoVelocityEstimate:
    """RANSAC over minimal 3-point samples, then least squares on the best consensus.

    ``cov`` is the least-squares posterior ``s^2 (A^T A)^+`` with ``s^2`` the
    unbiased residual variance. ``valid`` is False when the consensus is
    smaller than ``cfg.ransac_min_inlier_fraction`` of the Doppler points.
    """
    cfg = cfg or PreprocessConfig()
    mounts = list(sensor_mounts) if sensor_mounts else [Pose2()]
    usable = scan.has_doppler
    if usable.sum() < 3:
        raise InsufficientDoppler(f"need at least 3 Doppler returns, got {int(usable.sum())}")
    idx_all = np.nonzero(usable)[0]
    a = doppler_design_matrix(scan.subset(usable), mounts)
    b = scan.radial_velocity[usable]
    n = len(b)
    rng = np.random.default_rng(seed)

    thr = cfg.ransac_inlier_threshold
    best = None
    best_key = (-1, 0.0)
    for _ in range(cfg.ransac_iterations):
        sample = rng.choice(n, size=3, replace=False)
        x, *_ = np.linalg.lstsq(a[sample], b[sample], rcond=None)
        res = np.abs(a @ x - b)
        inl = res <= thr
        key = (int(inl.sum()), -float(res[inl].sum()))  # ties go to the tighter fit
        if key > best_key:
            best, best_key = inl, key

    # refit, re-score, repeat until the consensus set stops changing
    for _ in range(REFINE_ROUNDS):
        x, _, rank, _ = np.linalg.lstsq(a[best], b[best], rcond=None)
        refined = np.abs(a @ x - b) <= thr
        if refined.sum() < 3 or np.array_equal(refined, best):
            break
        best = refined
    best_count = int(best.sum())
    a_in, b_in = a[best], b[best]
    x, _, rank, _ = np.linalg.lstsq(a_in, b_in, rcond=None)
    resid = a_in @ x - b_in
    dof = len(b_in) - rank
    sigma2 = float(resid @ resid) / dof if dof > 0 else cfg.ransac_inlier_threshold**2
    cov = symmetrize(sigma2 * np.linalg.pinv(a_in.T @ a_in))
    inliers = np.zeros(len(scan), dtype=bool)
    inliers[idx_all[best]] = True
    valid = best_count >= cfg.ransac_min_inlier_fraction * n
    return EgoVelocityEstimate(x[:2].copy(), float(x[2]), cov, best_count, bool(valid), mounts, inliers)


def _twist_jacobian(a: float, b: float, phi: float) -> np.ndarray:
    """d exp_twist / d(a, b, phi)."""
    if abs(phi) < 1e-4:
        s, c = 1.0 - phi * phi / 6.0, phi / 2.0 - phi**3 / 24.0
        ds, dc = -phi / 3.0, 0.5 - phi * phi / 8.0
    else:
        s, c = math.sin(phi) / phi, (1.0 - math.cos(phi)) / phi
        ds = (phi * math.cos(phi) - math.sin(phi)) / phi**2
        dc = (phi * math.sin(phi) - 1.0 + math.cos(phi)) / phi**2
    return np.array([[s, -c, a * ds - b * dc],
                     [c, s, a * dc + b * ds],
                     [0.0, 0.0, 1.0]])


def integrate_velocity(est: EgoVelocityEstimate, dt: float) -> tuple[Pose2, np.ndarray]:
    """Constant-velocity motion over ``dt`` and its first-order covariance."""
    if not est.valid:
        raise InvalidEstimate("cannot integrate an invalid ego-velocity estimate")
    if not dt > 0:
        raise InvalidEstimate("dt must be positive")
    a, b, phi = est.v[0] * dt, est.v[1] * dt, est.omega * dt
    if abs(est.omega) < STRAIGHT_LINE_OMEGA:
        pose = Pose2(a, b, phi)
    else:
        pose = exp_twist(a, b, phi)
    j = _twist_jacobian(a, b, phi)
    return pose, symmetrize(j @ (np.asarray(est.cov) * dt * dt) @ j.T)
