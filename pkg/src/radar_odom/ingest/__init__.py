from radar_odom.ingest.formats import (
    PointScan, PolarScan, RadarPoint, Trajectory, check_monotonic, load_point_scan,
    load_polar_scan, load_trajectory, write_point_scan, write_polar_scan, write_trajectory,
)
from radar_odom.ingest.synthetic import (
    NoiseSpec, PolarGeometry, SensorRig, SyntheticSequence, WorldSpec, body_velocities,
    constant_twist_trajectory, dense_point_scene, load_world, parse_world, synthesize_scene,
    urban_world,
)

__all__ = [
    "PointScan", "PolarScan", "RadarPoint", "Trajectory", "check_monotonic", "load_point_scan",
    "load_polar_scan", "load_trajectory", "write_point_scan", "write_polar_scan", "write_trajectory",
    "NoiseSpec", "PolarGeometry", "SensorRig", "SyntheticSequence", "WorldSpec", "body_velocities",
    "constant_twist_trajectory", "dense_point_scene", "load_world", "parse_world", "synthesize_scene",
    "urban_world",
]
