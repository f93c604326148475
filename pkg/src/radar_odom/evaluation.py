"""Odometry error metrics: KITTI-style segment errors, per-metre error and frame-to-frame error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from radar_odom.core import Pose2, between, compose, inverse, normalize_angle
from radar_odom.errors import NoOverlap, TimeAlignmentFailure
from radar_odom.ingest.formats import Trajectory

KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass
class EvalReport:
    translational_error_percent: float
    rotational_error_deg_per_m: float
    per_frame_translation_m: list[float] = field(default_factory=list)
    per_frame_rotation_deg: list[float] = field(default_factory=list)
    # length -> (translational %, rotational deg/m, segment count)
    segment_table: dict[float, tuple[float, float, int]] = field(default_factory=dict)

    @property
    def mean_frame_translation_m(self) -> float:
        return float(np.mean(self.per_frame_translation_m)) if self.per_frame_translation_m else 0.0

    @property
    def mean_frame_rotation_deg(self) -> float:
        return float(np.mean(self.per_frame_rotation_deg)) if self.per_frame_rotation_deg else 0.0


def _interpolate(traj: Trajectory, t: float) -> Pose2:
    ts = traj.timestamps
    j = int(np.searchsorted(ts, t))
    if j < len(ts) and ts[j] == t:
        return traj.poses[j]
    a, b = traj.poses[j - 1], traj.poses[j]
    u = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
    return Pose2(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y),
                 a.theta + u * normalize_angle(b.theta - a.theta))


def associate(estimate: Trajectory, ground_truth: Trajectory, tolerance: float = 0.05,
              interpolate: bool = False) -> tuple[list[Pose2], list[Pose2]]:
    """Pair each estimated pose with ground truth at (nearly) the same time.

    Nearest-timestamp matching within ``tolerance`` by default; estimated
    poses without a partner are dropped. With ``interpolate`` the ground
    truth is linearly interpolated instead (estimates outside its time span
    are dropped).
    """
    gts = ground_truth.timestamps
    est_out, gt_out = [], []
    for t, pose in estimate:
        if interpolate:
            if gts[0] <= t <= gts[-1]:
                est_out.append(pose)
                gt_out.append(_interpolate(ground_truth, t))
            continue
        j = int(np.searchsorted(gts, t))
        cands = [c for c in (j - 1, j) if 0 <= c < len(gts)]
        best = min(cands, key=lambda c: abs(gts[c] - t))
        if abs(gts[best] - t) <= tolerance:
            est_out.append(pose)
            gt_out.append(ground_truth.poses[best])
    if len(est_out) < 2:
        raise TimeAlignmentFailure(f"only {len(est_out)} poses associate within {tolerance} s")
    return est_out, gt_out


def _path_lengths(poses: Sequence[Pose2]) -> np.ndarray:
    steps = [math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(poses, poses[1:])]
    return np.concatenate([[0.0], np.cumsum(steps)])


def _error_pose(gt_a: Pose2, gt_b: Pose2, est_a: Pose2, est_b: Pose2) -> Pose2:
    return compose(inverse(between(gt_a, gt_b)), between(est_a, est_b))


def segment_errors(est: Sequence[Pose2], gt: Sequence[Pose2], lengths: Sequence[float],
                   step: int = 1) -> list[tuple[int, float, float, float]]:
    """``(first_frame, length, translation error / length, rotation error [rad] / length)`` per segment."""
    dist = _path_lengths(gt)
    out = []
    for i in range(0, len(gt), step):
        for length in lengths:
            j = int(np.searchsorted(dist, dist[i] + length, side="left"))
            if j >= len(gt):
                continue
            e = _error_pose(gt[i], gt[j], est[i], est[j])
            out.append((i, float(length), math.hypot(e.x, e.y) / length, abs(e.theta) / length))
    return out


def frame_errors(estimate: Trajectory, ground_truth: Trajectory, tolerance: float = 0.05,
                 interpolate: bool = False) -> tuple[list[float], list[float]]:
    """Per consecutive pair: translation [m] and rotation [deg] of the relative-motion error."""
    est, gt = associate(estimate, ground_truth, tolerance, interpolate)
    trans, rot = [], []
    for k in range(1, len(est)):
        e = _error_pose(gt[k - 1], gt[k], est[k - 1], est[k])
        trans.append(math.hypot(e.x, e.y))
        rot.append(math.degrees(abs(e.theta)))
    return trans, rot


def kitti_errors(estimate: Trajectory, ground_truth: Trajectory, lengths: Sequence[float] = KITTI_LENGTHS,
                 tolerance: float = 0.05, interpolate: bool = False, step: int = 1) -> EvalReport:
    """Mean relative error over ground-truth path segments of each length, from every pose.

    Translation is reported in percent, rotation in degrees per metre; the
    overall figures average every (start pose, length) segment.
    """
    est, gt = associate(estimate, ground_truth, tolerance, interpolate)
    segs = segment_errors(est, gt, lengths, step)
    if not segs:
        raise NoOverlap(f"ground truth path ({_path_lengths(gt)[-1]:.1f} m) is shorter than {min(lengths)} m")
    table = {}
    for length in lengths:
        rows = [s for s in segs if s[1] == float(length)]
        if rows:
            table[float(length)] = (100.0 * float(np.mean([r[2] for r in rows])),
                                    math.degrees(float(np.mean([r[3] for r in rows]))), len(rows))
    trans, rot = [], []
    for k in range(1, len(est)):
        e = _error_pose(gt[k - 1], gt[k], est[k - 1], est[k])
        trans.append(math.hypot(e.x, e.y))
        rot.append(math.degrees(abs(e.theta)))
    return EvalReport(100.0 * float(np.mean([s[2] for s in segs])),
                      math.degrees(float(np.mean([s[3] for s in segs]))), trans, rot, table)


def per_meter_error(estimate: Trajectory, ground_truth: Trajectory, tolerance: float = 0.05,
                    interpolate: bool = False) -> tuple[float, float]:
    """Segment error with a single 1 m segment length: (percent, deg/m)."""
    r = kitti_errors(estimate, ground_truth, (1.0,), tolerance, interpolate)
    return r.translational_error_percent, r.rotational_error_deg_per_m


def format_report(report: EvalReport) -> str:
    lines = [f"{'length [m]':>10}  {'trans [%]':>10}  {'rot [deg/m]':>12}  {'segments':>8}"]
    for length, (t, r, n) in sorted(report.segment_table.items()):
        lines.append(f"{length:>10g}  {t:>10.4f}  {r:>12.6f}  {n:>8d}")
    lines.append(f"{'mean':>10}  {report.translational_error_percent:>10.4f}  "
                 f"{report.rotational_error_deg_per_m:>12.6f}")
    lines.append(f"frame-to-frame: {report.mean_frame_translation_m:.4f} m/frame, "
                 f"{report.mean_frame_rotation_deg:.4f} deg/frame")
    return "\n".join(lines)


def write_report_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length_m", "translational_error_percent", "rotational_error_deg_per_m", "segments"])
        for length, (t, r, n) in sorted(report.segment_table.items()):
            w.writerow([repr(length), repr(t), repr(r), n])
        w.writerow(["mean", repr(report.translational_error_percent), repr(report.rotational_error_deg_per_m),
                    sum(v[2] for v in report.segment_table.values())])
