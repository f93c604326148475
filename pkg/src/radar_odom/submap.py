"""Probabilistic submap: the latest N scans as weighted Gaussians in the newest scan's frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from radar_odom.core import (
    Pose2, compose_with_covariance, inverse_with_covariance, propagate_point_covariance,
    transform_point,
)
from radar_odom.errors import InsufficientInput, MotionCountMismatch
from radar_odom.ingest.formats import PointScan


@dataclass
class WeightedPoint:
    position: np.ndarray
    weight: float
    cov: np.ndarray
    has_power: bool = True


@dataclass
class Submap:
    """Column-wise weighted Gaussians.

    ``weights`` holds the raw returned power, or 1.0 where the sensor reports
    none (``has_power`` False); power shifting is applied downstream.
    """

    frame_timestamp: float
    positions: np.ndarray
    weights: np.ndarray
    covs: np.ndarray
    has_power: np.ndarray
    scan_count: int = 1

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def points(self) -> list[WeightedPoint]:
        return [WeightedPoint(self.positions[i].copy(), float(self.weights[i]), self.covs[i].copy(),
                              bool(self.has_power[i])) for i in range(len(self))]

    @classmethod
    def from_points(cls, points: Sequence[WeightedPoint], frame_timestamp: float = 0.0) -> Submap:
        return cls(frame_timestamp,
                   np.array([p.position for p in points], dtype=float).reshape(-1, 2),
                   np.array([p.weight for p in points], dtype=float),
                   np.array([p.cov for p in points], dtype=float).reshape(-1, 2, 2),
                   np.array([p.has_power for p in points], dtype=bool))

    @classmethod
    def from_scan(cls, scan: PointScan) -> Submap:
        has_power = ~np.isnan(scan.power)
        return cls(scan.timestamp, scan.positions.copy(), np.where(has_power, scan.power, 1.0),
                   scan.covs.copy(), has_power, 1)


def build_submap(scans: Sequence[PointScan], motions: Sequence[tuple[Pose2, np.ndarray]], n: int) -> Submap:
    """Stack the newest ``min(n, len(scans))`` scans in the newest frame.

    ``motions[k]`` is the pose of scan ``k + 1`` in the frame of scan ``k``
    with its 3x3 covariance. Older points are moved by the inverse of the
    chained motion; their covariance picks up the chained motion
    uncertainty to first order.
    """
    if len(scans) < 1:
        raise InsufficientInput("build_submap needs at least one scan")
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(motions) != len(scans) - 1:
        raise MotionCountMismatch(f"{len(scans)} scans need {len(scans) - 1} motions, got {len(motions)}")
    newest = len(scans) - 1
    used = min(n, len(scans))

    chained, chained_cov = Pose2(), np.zeros((3, 3))
    parts = [Submap.from_scan(scans[newest])]
    for j in range(newest - 1, newest - used, -1):
        m, m_cov = motions[j]
        chained, chained_cov = compose_with_covariance(m, m_cov, chained, chained_cov)
        to_newest, to_newest_cov = inverse_with_covariance(chained, chained_cov)
        part = Submap.from_scan(scans[j])
        if len(part):
            part.covs = propagate_point_covariance(to_newest, to_newest_cov, part.positions, part.covs)
            part.positions = transform_point(to_newest, part.positions)
        parts.append(part)

    return Submap(
        scans[newest].timestamp,
        np.concatenate([p.positions for p in parts]).reshape(-1, 2),
        np.concatenate([p.weights for p in parts]),
        np.concatenate([p.covs for p in parts]).reshape(-1, 2, 2),
        np.concatenate([p.has_power for p in parts]),
        used,
    )
