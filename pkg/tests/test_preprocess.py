import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from radar_odom.core import Pose2
from radar_odom.egomotion import EgoVelocityEstimate, estimate_ego_velocity
from radar_odom.ingest import (
    NoiseSpec, PointScan, PolarGeometry, PolarScan, SensorRig, WorldSpec, constant_twist_trajectory,
    synthesize_scene, urban_world,
)
from radar_odom.ingest.synthetic import LANDMARK, SPECKLE
from radar_odom.preprocess import PreprocessConfig, gate_and_filter_automotive, threshold_polar


def test_all_zero_power_is_empty():
    scan = PolarScan(0.0, 0.5, np.zeros((8, 20)))
    assert len(threshold_polar(scan, PreprocessConfig(threshold=0.333))) == 0


def test_single_bin_position():
    power = np.zeros((4, 20))
    power[0, 9] = 0.5
    out = threshold_polar(PolarScan(0.0, 0.5, power), PreprocessConfig(threshold=0.333))
    assert len(out) == 1
    np.testing.assert_allclose(out.positions[0], [4.75, 0.0], atol=1e-12)
    assert out.power[0] == 0.5
    assert out.points[0].radial_velocity is None


def test_thresholding_separates_speckle_from_landmarks(box_world):
    noise = NoiseSpec(speckle_density=0.3, speckle_max_power=0.2, return_spread_bins=0.0)
    world = WorldSpec(points=[(p[0], p[1], 0.8) for p in box_world.points],
                      walls=[w[:4] + (0.8,) for w in box_world.walls])
    traj = constant_twist_trajectory(0, 0, 0, 0.25, 1)
    seq = synthesize_scene(world, traj, "scanning", noise, seed=5, geometry=PolarGeometry(360, 240, 0.25))
    scan, labels = seq.scans[0], seq.labels[0]
    out = threshold_polar(scan, PreprocessConfig(threshold=0.333))
    kept = np.zeros_like(labels, dtype=bool)
    az = np.rint(out.azimuths / (2 * np.pi) * scan.azimuth_count).astype(int)
    b = np.rint(out.ranges / scan.range_resolution - 0.5).astype(int)
    kept[az, b] = True
    assert (labels == SPECKLE).sum() > 1000
    assert not np.any(kept & (labels == SPECKLE))
    assert np.all(kept[labels == LANDMARK])


def test_threshold_zero_keeps_nonzero_bins_in_range():
    rng = np.random.default_rng(0)
    power = rng.random((16, 300)) * (rng.random((16, 300)) < 0.3)
    scan = PolarScan(0.0, 0.25, power)
    cfg = PreprocessConfig(threshold=0.0)
    out = threshold_polar(scan, cfg)
    in_range = scan.bin_ranges() <= cfg.max_range_scanning
    assert len(out) == int(np.count_nonzero(scan.power[:, in_range]))
    assert np.all(out.ranges <= cfg.max_range_scanning)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, (6, 30), elements=st.floats(0, 1, width=32)),
       st.lists(st.floats(0, 1), min_size=2, max_size=5))
def test_threshold_monotone(power, thresholds):
    scan = PolarScan(0.0, 2.5, power)
    counts = [len(threshold_polar(scan, PreprocessConfig(threshold=t))) for t in sorted(thresholds)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def _ego(v, omega=0.0, mounts=(Pose2(),)):
    return EgoVelocityEstimate(np.asarray(v, float), omega, np.zeros((3, 3)), 10, True, list(mounts))


def _scan(az, vr, ranges=None):
    az = np.asarray(az, float)
    ranges = np.full(len(az), 10.0) if ranges is None else np.asarray(ranges, float)
    pos = np.stack([ranges * np.cos(az), ranges * np.sin(az)], 1)
    return PointScan(0.0, pos, ranges, az, np.zeros((len(az), 2, 2)), vr, np.full(len(az), np.nan))


def test_gate_stationary_keeps_all():
    scan = _scan([0.0, 1.0, 2.0, -1.0], [0, 0, 0, 0])
    assert len(gate_and_filter_automotive(scan, _ego([0, 0]), PreprocessConfig())) == 4


def test_gate_removes_inconsistent_doppler():
    scan = _scan([0.0, 0.0], [-5.0, 3.0])
    out = gate_and_filter_automotive(scan, _ego([5, 0]), PreprocessConfig())
    np.testing.assert_array_equal(out.radial_velocity, [-5.0])


def test_gate_range():
    scan = _scan([0.0, 0.0], [0.0, 0.0], ranges=[100.0, 151.0])
    cfg = PreprocessConfig()
    out = gate_and_filter_automotive(scan, _ego([0, 0]), cfg)
    assert len(out) == 1 and np.all(out.ranges <= cfg.max_range_automotive)


def test_gate_mover_removal_statistics():
    removed_frac, kept_frac = [], []
    rig = SensorRig.surround()
    for seed in range(50):
        rng = np.random.default_rng(seed)
        movers = [(float(x), float(y), float(vx), float(vy), 0.8) for x, y, vx, vy in
                  zip(rng.uniform(-30, 30, 6), rng.uniform(-30, 30, 6), rng.uniform(-10, 10, 6), rng.uniform(-10, 10, 6))]
        world = urban_world(rng, half_size=50, movers=movers)
        traj = constant_twist_trajectory(8.0, 0.0, 0.05, 0.1, 1)
        noise = NoiseSpec(doppler_sigma=0.05, mover_points=12, wall_density=0.5)
        seq = synthesize_scene(world, traj, "automotive", noise, seed=seed, rig=rig)
        scan, static = seq.scans[0], seq.labels[0]
        ego = estimate_ego_velocity(scan, rig.mounts, PreprocessConfig(), seed=seed)
        out = gate_and_filter_automotive(scan, ego, PreprocessConfig())
        kept = np.zeros(len(scan), dtype=bool)
        kept[np.isin(scan.positions[:, 0], out.positions[:, 0])] = True
        if (~static).any():
            removed_frac.append(np.mean(~kept[~static]))
        kept_frac.append(np.mean(kept[static]))
    assert np.mean(removed_frac) >= 0.95
    assert np.mean(kept_frac) >= 0.95
