"""Scan cleaning: power thresholding for scanning radar, range and Doppler gating for automotive radar."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from radar_odom.core import polar_covariance
from radar_odom.errors import ConfigError
from radar_odom.ingest.formats import (
    AUTOMOTIVE_SIGMA_AZIMUTH, AUTOMOTIVE_SIGMA_RANGE, SCANNING_SIGMA_AZIMUTH, PointScan, PolarScan,
)


@dataclass
class PreprocessConfig:
    threshold: float = 0.333
    max_range_scanning: float = 62.5
    max_range_automotive: float = 150.0
    ransac_inlier_threshold: float = 0.2
    ransac_iterations: int = 200
    ransac_min_inlier_fraction: float = 0.3
    # scanning-radar range accuracy defaults to the bin size when unset
    scanning_sigma_range: float | None = None
    scanning_sigma_azimuth: float = SCANNING_SIGMA_AZIMUTH
    automotive_sigma_range: float = AUTOMOTIVE_SIGMA_RANGE
    automotive_sigma_azimuth: float = AUTOMOTIVE_SIGMA_AZIMUTH

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("preprocess.threshold must lie in [0, 1]")
        if self.max_range_scanning <= 0 or self.max_range_automotive <= 0:
            raise ConfigError("range gates must be positive")
        if self.ransac_inlier_threshold <= 0 or self.ransac_iterations < 1:
            raise ConfigError("RANSAC threshold and iteration count must be positive")
        if not 0.0 <= self.ransac_min_inlier_fraction <= 1.0:
            raise ConfigError("preprocess.ransac_min_inlier_fraction must lie in [0, 1]")


def threshold_polar(scan: PolarScan, cfg: PreprocessConfig) -> PointScan:
    """Keep polar bins whose power exceeds the threshold, as Cartesian points.

    Bin ``b`` sits at range ``(b + 0.5) * range_resolution``. Points keep
    their power and get the polar-accuracy covariance; there is no Doppler.
    """
    ranges = scan.bin_ranges()
    in_range = ranges <= cfg.max_range_scanning
    mask = (scan.power > cfg.threshold) & in_range[None, :]
    az_idx, bin_idx = np.nonzero(mask)
    r = ranges[bin_idx]
    a = scan.azimuths()[az_idx]
    pos = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    sigma_r = cfg.scanning_sigma_range if cfg.scanning_sigma_range is not None else scan.range_resolution
    covs = polar_covariance(r, a, sigma_r, cfg.scanning_sigma_azimuth)
    n = len(r)
    return PointScan(scan.timestamp, pos, r, a, covs, np.full(n, np.nan),
                     scan.power[az_idx, bin_idx].astype(float))


def gate_and_filter_automotive(scan: PointScan, ego, cfg: PreprocessConfig) -> PointScan:
    """Range-gate and drop points whose Doppler disagrees with the ego-motion.

    ``ego`` is an :class:`~radar_odom.egomotion.EgoVelocityEstimate`. Points
    without a Doppler measurement cannot be checked and are dropped.
    """
    keep = scan.ranges <= cfg.max_range_automotive
    residual = np.abs(scan.radial_velocity - ego.predicted_radial_velocity(scan))
    keep &= residual <= cfg.ransac_inlier_threshold  # NaN compares False
    return scan.subset(keep)
