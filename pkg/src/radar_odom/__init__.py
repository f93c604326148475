"""Radar odometry for automotive (Doppler point cloud) and scanning (polar image) radar."""

from radar_odom.core import Pose2, compose, inverse, transform_point

__version__ = "0.1.0"
__all__ = ["Pose2", "compose", "inverse", "transform_point"]
