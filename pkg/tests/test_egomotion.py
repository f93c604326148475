import math

import numpy as np
import pytest

from radar_odom.core import Pose2
from radar_odom.egomotion import (
    EgoVelocityEstimate, doppler_design_matrix, estimate_ego_velocity, integrate_velocity,
)
from radar_odom.errors import InsufficientDoppler, InvalidEstimate
from radar_odom.ingest import PointScan, SensorRig
from radar_odom.preprocess import PreprocessConfig


def forward_scan(az, v, omega=0.0, mounts=(Pose2(),), sensor_ids=None, noise=0.0, rng=None):
    """Radial velocities of static points from the sensor-motion formula, written independently."""
    az = np.asarray(az, float)
    sensor_ids = np.zeros(len(az), int) if sensor_ids is None else np.asarray(sensor_ids)
    vr = np.empty(len(az))
    for i, (a, sid) in enumerate(zip(az, sensor_ids)):
        m = mounts[sid]
        vs = np.array([v[0] - omega * m.y, v[1] + omega * m.x])  # vehicle frame
        ray = np.array([math.cos(a + m.theta), math.sin(a + m.theta)])
        vr[i] = -ray @ vs
    if noise:
        vr += noise * rng.standard_normal(len(az))
    r = np.full(len(az), 10.0)
    pos = np.stack([r * np.cos(az), r * np.sin(az)], 1)
    return PointScan(0.0, pos, r, az, np.zeros((len(az), 2, 2)), vr, np.full(len(az), np.nan), sensor_ids)


def test_zero_doppler_zero_velocity():
    scan = forward_scan([0.0, 1.0, 2.5, -2.0], [0, 0])
    est = estimate_ego_velocity(scan, [Pose2()], PreprocessConfig(), seed=0)
    np.testing.assert_allclose(est.v, 0.0, atol=1e-12)
    assert est.omega == pytest.approx(0.0, abs=1e-12)
    assert est.valid


def test_noiseless_centered_sensor_exact():
    az = np.linspace(-math.pi, math.pi, 40, endpoint=False)
    scan = forward_scan(az, [5.0, 0.0])
    est = estimate_ego_velocity(scan, [Pose2()], PreprocessConfig(), seed=1)
    # exact linear solve of the same system as oracle
    a = np.stack([-np.cos(az), -np.sin(az)], 1)
    oracle = np.linalg.solve(a.T @ a, a.T @ scan.radial_velocity)
    np.testing.assert_allclose(oracle, [5.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(est.v, [5.0, 0.0], atol=1e-9)
    assert est.omega == pytest.approx(0.0, abs=1e-9)
    assert np.all(np.abs(scan.radial_velocity - est.predicted_radial_velocity(scan)) <= 1e-9)


def test_rotation_observable_with_offset_mounts():
    rig = SensorRig.surround()
    rng = np.random.default_rng(0)
    sids = rng.integers(0, 5, 80)
    az = rng.uniform(-1.0, 1.0, 80)
    scan = forward_scan(az, [7.0, 0.3], omega=0.4, mounts=rig.mounts, sensor_ids=sids)
    est = estimate_ego_velocity(scan, rig.mounts, PreprocessConfig(), seed=0)
    np.testing.assert_allclose(est.twist, [7.0, 0.3, 0.4], atol=1e-9)


@pytest.mark.parametrize("phi", [0.3, -1.2, 2.0])
def test_rotation_equivariance(phi):
    az = np.random.default_rng(3).uniform(-math.pi, math.pi, 30)
    v = np.array([4.0, -1.5])
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    e1 = estimate_ego_velocity(forward_scan(az, v), None, PreprocessConfig(), seed=0)
    e2 = estimate_ego_velocity(forward_scan(az + phi, rot @ v), None, PreprocessConfig(), seed=0)
    np.testing.assert_allclose(e2.v, rot @ e1.v, atol=1e-9)


def test_insufficient_doppler():
    scan = forward_scan([0.0, 1.0], [1, 0])
    with pytest.raises(InsufficientDoppler):
        estimate_ego_velocity(scan)


def outlier_trial(seed, n=200, outlier_frac=0.3, sigma=0.1):
    rng = np.random.default_rng(seed)
    rig = SensorRig.surround()
    v = rng.uniform(-10, 10, 2)
    omega = rng.uniform(-0.5, 0.5)
    sids = rng.integers(0, 5, n)
    az = rng.uniform(-math.pi / 3, math.pi / 3, n)
    scan = forward_scan(az, v, omega, rig.mounts, sids, sigma, rng)
    bad = rng.random(n) < outlier_frac
    scan.radial_velocity[bad] += rng.uniform(-10, 10, bad.sum())
    est = estimate_ego_velocity(scan, rig.mounts, PreprocessConfig(), seed=seed)
    return np.linalg.norm(est.v - v), est


def test_outlier_robustness_statistics():
    errors = [outlier_trial(seed)[0] for seed in range(100)]
    assert np.mean(np.asarray(errors) <= 0.05) >= 0.95


def test_covariance_shrinks_with_more_points():
    def trace(n):
        rng = np.random.default_rng(n)
        az = rng.uniform(-math.pi, math.pi, n)
        scan = forward_scan(az, [3.0, 1.0], noise=0.1, rng=rng)
        return np.trace(estimate_ego_velocity(scan, None, PreprocessConfig(), seed=0).cov)
    assert np.mean([trace(200) for _ in range(5)]) < np.mean([trace(20) for _ in range(5)])


def test_invalid_when_consensus_too_small():
    rng = np.random.default_rng(0)
    az = rng.uniform(-math.pi, math.pi, 50)
    scan = forward_scan(az, [3.0, 0.0])
    scan.radial_velocity[:] = rng.uniform(-20, 20, 50)
    est = estimate_ego_velocity(scan, None, PreprocessConfig(), seed=0)
    assert not est.valid
    with pytest.raises(InvalidEstimate):
        integrate_velocity(est, 0.1)


def _est(v, omega, cov=None):
    return EgoVelocityEstimate(np.asarray(v, float), omega, np.zeros((3, 3)) if cov is None else cov, 10, True)


def test_integrate_straight():
    pose, cov = integrate_velocity(_est([1.0, 0.0], 0.0), 1.0)
    assert (pose.x, pose.y, pose.theta) == pytest.approx((1.0, 0.0, 0.0))
    np.testing.assert_array_equal(cov, 0.0)


def test_integrate_arc():
    pose, _ = integrate_velocity(_est([math.pi / 2, 0.0], math.pi / 2), 1.0)
    # x = v/w sin(wt), y = v/w (1 - cos(wt))
    assert pose.x == pytest.approx(1.0, abs=1e-12)
    assert pose.y == pytest.approx(1.0, abs=1e-12)
    assert pose.theta == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("omega", [0.0, 1e-6, 0.3, -2.0])
def test_integration_jacobian_matches_finite_differences(omega):
    cov = np.diag([0.04, 0.01, 0.002])
    dt = 0.5
    _, got = integrate_velocity(_est([3.0, 0.5], omega, cov), dt)
    base = np.array([3.0, 0.5, omega])
    j = np.zeros((3, 3))
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        plus = integrate_velocity(_est((base + e)[:2], (base + e)[2]), dt)[0].as_array()
        minus = integrate_velocity(_est((base - e)[:2], (base - e)[2]), dt)[0].as_array()
        j[:, k] = (plus - minus) / (2 * h)
    np.testing.assert_allclose(got, j @ cov @ j.T, rtol=1e-5, atol=1e-12)


def test_design_matrix_rows_unit_direction():
    scan = forward_scan([0.0, math.pi / 2], [0, 0])
    np.testing.assert_allclose(doppler_design_matrix(scan, [Pose2()]), [[-1, 0, 0], [0, -1, 0]], atol=1e-15)
