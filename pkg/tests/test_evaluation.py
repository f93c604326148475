import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radar_odom.core import Pose2, compose
from radar_odom.errors import NoOverlap, TimeAlignmentFailure
from radar_odom.evaluation import (
    KITTI_LENGTHS, associate, format_report, frame_errors, kitti_errors, per_meter_error, write_report_csv,
)
from radar_odom.ingest import Trajectory


def from_steps(steps, dt=0.25, start=Pose2()):
    poses = [start]
    for s in steps:
        poses.append(compose(poses[-1], Pose2(*s)))
    return Trajectory(dt * np.arange(len(poses)), poses)


def random_pair(seed, n=500):
    """Smooth ground truth plus an estimate with known per-frame perturbations."""
    rng = np.random.default_rng(seed)
    steps = np.c_[rng.uniform(1.5, 2.5, n), rng.normal(0, 0.05, n), 0.03 * np.sin(np.arange(n) / 20.0)]
    noisy = steps + rng.normal(0, [0.03, 0.02, 0.003], (n, 3))
    return from_steps(noisy), from_steps(steps)


# -- brute-force oracle on homogeneous matrices -------------------------------------------

def _mat(p):
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def _err(ga, gb, ea, eb):
    gt_rel = np.linalg.inv(_mat(ga)) @ _mat(gb)
    est_rel = np.linalg.inv(_mat(ea)) @ _mat(eb)
    e = np.linalg.inv(gt_rel) @ est_rel
    return math.hypot(e[0, 2], e[1, 2]), abs(math.atan2(e[1, 0], e[0, 0]))


def oracle(est, gt, lengths):
    dist = [0.0]
    for a, b in zip(gt, gt[1:]):
        dist.append(dist[-1] + math.sqrt((b.x - a.x) ** 2 + (b.y - a.y) ** 2))
    t_all, r_all = [], []
    for i in range(len(gt)):
        for length in lengths:
            j = next((k for k in range(i, len(gt)) if dist[k] >= dist[i] + length), None)
            if j is None:
                continue
            t, r = _err(gt[i], gt[j], est[i], est[j])
            t_all.append(t / length)
            r_all.append(r / length)
    frames = [_err(gt[k - 1], gt[k], est[k - 1], est[k]) for k in range(1, len(gt))]
    return (100 * sum(t_all) / len(t_all), math.degrees(sum(r_all) / len(r_all)),
            [f[0] for f in frames], [math.degrees(f[1]) for f in frames])


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force_oracle(seed):
    est, gt = random_pair(seed)
    want_t, want_r, want_ft, want_fr = oracle(est.poses, gt.poses, KITTI_LENGTHS)
    rep = kitti_errors(est, gt)
    assert rep.translational_error_percent == pytest.approx(want_t, rel=1e-12, abs=1e-12)
    assert rep.rotational_error_deg_per_m == pytest.approx(want_r, rel=1e-12, abs=1e-12)
    pm_t, pm_r, _, _ = oracle(est.poses, gt.poses, (1.0,))
    assert per_meter_error(est, gt) == pytest.approx((pm_t, pm_r), rel=1e-12, abs=1e-12)
    ft, fr = frame_errors(est, gt)
    np.testing.assert_allclose(ft, want_ft, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fr, want_fr, rtol=1e-12, atol=1e-12)


def test_identical_is_zero():
    _, gt = random_pair(0)
    rep = kitti_errors(gt, gt)
    assert rep.translational_error_percent == pytest.approx(0.0, abs=1e-12)
    assert rep.rotational_error_deg_per_m == pytest.approx(0.0, abs=1e-12)
    assert per_meter_error(gt, gt) == pytest.approx((0.0, 0.0), abs=1e-12)
    ft, fr = frame_errors(gt, gt)
    assert max(ft) < 1e-12 and max(fr) < 1e-12


def test_scaled_straight_line():
    gt = from_steps([(1.0, 0.0, 0.0)] * 1000)
    est = from_steps([(1.01, 0.0, 0.0)] * 1000)
    rep = kitti_errors(est, gt)
    assert rep.translational_error_percent == pytest.approx(1.0, rel=1e-9)
    assert rep.rotational_error_deg_per_m == 0.0
    for length, (t, r, n) in rep.segment_table.items():
        assert t == pytest.approx(1.0, rel=1e-9)
        assert n == 1001 - int(length)
    assert per_meter_error(est, gt)[0] == pytest.approx(1.0, rel=1e-9)


def test_lateral_offset_per_frame():
    gt = from_steps([(1.0, 0.0, 0.02)] * 50)
    est = from_steps([tuple(compose(Pose2(1.0, 0.0, 0.02), Pose2(0.0, 0.05, 0.0)).as_array())] * 50)
    ft, fr = frame_errors(est, gt)
    np.testing.assert_allclose(ft, 0.05, atol=1e-12)
    assert max(fr) < 1e-9


def test_kitti_at_one_metre_equals_per_meter():
    est, gt = random_pair(4, n=200)
    rep = kitti_errors(est, gt, (1.0,))
    assert per_meter_error(est, gt) == (rep.translational_error_percent, rep.rotational_error_deg_per_m)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-100, 100), y=st.floats(-100, 100), th=st.floats(-math.pi, math.pi), seed=st.integers(0, 99))
def test_rigid_invariance(x, y, th, seed):
    est, gt = random_pair(seed, n=80)
    t = Pose2(x, y, th)
    move = lambda tr: Trajectory(tr.timestamps, [compose(t, p) for p in tr.poses])
    a = kitti_errors(est, gt, (10.0, 50.0))
    b = kitti_errors(move(est), move(gt), (10.0, 50.0))
    assert b.translational_error_percent == pytest.approx(a.translational_error_percent, abs=1e-9)
    assert b.rotational_error_deg_per_m == pytest.approx(a.rotational_error_deg_per_m, abs=1e-9)
    np.testing.assert_allclose(b.per_frame_translation_m, a.per_frame_translation_m, atol=1e-9)


def test_swap_symmetry_of_frame_errors():
    est, gt = random_pair(2, n=100)
    np.testing.assert_allclose(frame_errors(est, gt)[0], frame_errors(gt, est)[0], rtol=1e-12, atol=1e-12)


def test_short_path_raises_no_overlap():
    gt = from_steps([(1.0, 0.0, 0.0)] * 50)
    with pytest.raises(NoOverlap):
        kitti_errors(gt, gt)


def test_association_nearest_and_interpolated():
    gt = from_steps([(1.0, 0.0, 0.0)] * 10, dt=1.0)
    est = Trajectory([0.02, 1.04, 2.5, 3.0], [Pose2(0, 0, 0), Pose2(1, 0, 0), Pose2(2.5, 0, 0), Pose2(3, 0, 0)])
    e, g = associate(est, gt, tolerance=0.05)
    assert [p.x for p in g] == [0.0, 1.0, 3.0]  # the 2.5 s pose has no partner within 0.05 s
    e, g = associate(est, gt, interpolate=True)
    assert [p.x for p in g] == pytest.approx([0.02, 1.04, 2.5, 3.0])
    with pytest.raises(TimeAlignmentFailure):
        associate(Trajectory([0.5, 7.5], [Pose2(), Pose2()]), gt, tolerance=0.05)


def test_report_outputs(tmp_path):
    est, gt = random_pair(1)
    rep = kitti_errors(est, gt)
    text = format_report(rep)
    assert "trans [%]" in text and "m/frame" in text
    write_report_csv(tmp_path / "r.csv", rep)
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0].startswith("length_m") and rows[-1].startswith("mean")
    assert float(rows[-1].split(",")[1]) == rep.translational_error_percent
