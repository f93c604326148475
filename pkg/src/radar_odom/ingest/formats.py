"""Scan and trajectory containers plus their on-disk formats.

Polar scan (binary, little-endian)::

    b"PRS1" | float64 timestamp | uint32 azimuths | uint32 range bins
    | float64 range resolution [m] | float32 power[azimuths * bins] (azimuth-major)

Point scan (CSV)::

    timestamp_s,x_m,y_m,range_m,azimuth_rad,vr_mps,power[,sensor_id]

Empty fields mean "absent". ``x_m``/``y_m`` are in the vehicle frame,
``range_m``/``azimuth_rad`` are relative to the detecting sensor. The
trailing ``sensor_id`` column is optional and indexes the configured sensor
mounts (0 when omitted). A scan with no detections is written as one row
that carries only the timestamp.

Trajectory (CSV)::

    timestamp_s,x_m,y_m,theta_rad
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from radar_odom.core import Pose2, polar_covariance
from radar_odom.errors import MalformedFile, NonMonotonicTime, ValueOutOfRange

POLAR_MAGIC = b"PRS1"
_POLAR_HEADER = struct.Struct("<4sdIId")

POINT_COLUMNS = ["timestamp_s", "x_m", "y_m", "range_m", "azimuth_rad", "vr_mps", "power"]
TRAJECTORY_COLUMNS = ["timestamp_s", "x_m", "y_m", "theta_rad"]

# Midpoints of the published automotive accuracy ranges.
AUTOMOTIVE_SIGMA_RANGE = 0.25
AUTOMOTIVE_SIGMA_AZIMUTH = math.radians(0.5)
SCANNING_SIGMA_AZIMUTH = math.radians(0.9)


@dataclass
class PolarScan:
    timestamp: float
    range_resolution: float
    power: np.ndarray  # (azimuth_count, range_bin_count), float32

    def __post_init__(self) -> None:
        self.timestamp = float(self.timestamp)
        self.range_resolution = float(self.range_resolution)
        self.power = np.ascontiguousarray(self.power, dtype=np.float32)
        if self.power.ndim != 2 or self.power.shape[0] < 1 or self.power.shape[1] < 1:
            raise MalformedFile(f"power matrix must be 2-D and non-empty, got {self.power.shape}")
        if not self.range_resolution > 0:
            raise ValueOutOfRange("range_resolution must be positive")
        if not np.all(np.isfinite(self.power)) or self.power.min() < 0 or self.power.max() > 1:
            raise ValueOutOfRange("polar power values must lie in [0, 1]")

    @property
    def azimuth_count(self) -> int:
        return self.power.shape[0]

    @property
    def range_bin_count(self) -> int:
        return self.power.shape[1]

    def azimuths(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.azimuth_count) / self.azimuth_count

    def bin_ranges(self) -> np.ndarray:
        return (np.arange(self.range_bin_count) + 0.5) * self.range_resolution


@dataclass
class RadarPoint:
    position: np.ndarray
    range: float
    azimuth: float
    cov: np.ndarray
    radial_velocity: float | None = None
    power: float | None = None
    sensor_id: int = 0


def _opt(v: float) -> float | None:
    return None if math.isnan(v) else float(v)


@dataclass
class PointScan:
    """Timestamped radar detections, stored column-wise.

    Absent radial velocity or power is encoded as NaN.
    """

    timestamp: float
    positions: np.ndarray
    ranges: np.ndarray
    azimuths: np.ndarray
    covs: np.ndarray
    radial_velocity: np.ndarray
    power: np.ndarray
    sensor_ids: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.timestamp = float(self.timestamp)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        self.ranges = np.asarray(self.ranges, dtype=float).reshape(n)
        self.azimuths = np.asarray(self.azimuths, dtype=float).reshape(n)
        self.covs = np.asarray(self.covs, dtype=float).reshape(n, 2, 2)
        self.radial_velocity = np.asarray(self.radial_velocity, dtype=float).reshape(n)
        self.power = np.asarray(self.power, dtype=float).reshape(n)
        if self.sensor_ids is None:
            self.sensor_ids = np.zeros(n, dtype=int)
        self.sensor_ids = np.asarray(self.sensor_ids, dtype=int).reshape(n)
        if np.any(self.ranges < 0):
            raise ValueOutOfRange("range must be non-negative")
        p = self.power[~np.isnan(self.power)]
        if p.size and (p.min() < 0 or p.max() > 1):
            raise ValueOutOfRange("point power must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, timestamp: float) -> PointScan:
        return cls(timestamp, np.zeros((0, 2)), [], [], np.zeros((0, 2, 2)), [], [])

    @classmethod
    def from_points(cls, timestamp: float, points: Sequence[RadarPoint]) -> PointScan:
        if not points:
            return cls.empty(timestamp)
        nan = float("nan")
        return cls(
            timestamp,
            [p.position for p in points],
            [p.range for p in points],
            [p.azimuth for p in points],
            [p.cov for p in points],
            [nan if p.radial_velocity is None else p.radial_velocity for p in points],
            [nan if p.power is None else p.power for p in points],
            [p.sensor_id for p in points],
        )

    @property
    def points(self) -> list[RadarPoint]:
        return [
            RadarPoint(self.positions[i].copy(), float(self.ranges[i]), float(self.azimuths[i]),
                       self.covs[i].copy(), _opt(self.radial_velocity[i]), _opt(self.power[i]),
                       int(self.sensor_ids[i]))
            for i in range(len(self))
        ]

    @property
    def has_doppler(self) -> np.ndarray:
        return ~np.isnan(self.radial_velocity)

    def subset(self, mask) -> PointScan:
        return PointScan(self.timestamp, self.positions[mask], self.ranges[mask], self.azimuths[mask],
                         self.covs[mask], self.radial_velocity[mask], self.power[mask],
                         self.sensor_ids[mask])


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: list[Pose2]

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise MalformedFile("timestamp/pose count mismatch")
        if np.any(np.diff(self.timestamps) <= 0):
            raise NonMonotonicTime("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[tuple[float, Pose2]]:
        return iter(zip(self.timestamps.tolist(), self.poses))

    def as_array(self) -> np.ndarray:
        return np.array([p.as_array() for p in self.poses]).reshape(-1, 3)


def check_monotonic(timestamps: Sequence[float]) -> None:
    if np.any(np.diff(np.asarray(timestamps, dtype=float)) <= 0):
        raise NonMonotonicTime("scan timestamps must be strictly increasing")


# -- polar scans -------------------------------------------------------------

def write_polar_scan(path, scan: PolarScan) -> None:
    header = _POLAR_HEADER.pack(POLAR_MAGIC, scan.timestamp, scan.azimuth_count,
                                scan.range_bin_count, scan.range_resolution)
    Path(path).write_bytes(header + scan.power.astype("<f4").tobytes())


def load_polar_scan(path) -> PolarScan:
    data = Path(path).read_bytes()
    if len(data) < _POLAR_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, ts, n_az, n_bins, res = _POLAR_HEADER.unpack_from(data)
    if magic != POLAR_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    expected = _POLAR_HEADER.size + 4 * n_az * n_bins
    if n_az == 0 or n_bins == 0 or len(data) != expected:
        raise MalformedFile(f"{path}: expected {expected} bytes for {n_az}x{n_bins}, got {len(data)}")
    power = np.frombuffer(data, dtype="<f4", offset=_POLAR_HEADER.size).reshape(n_az, n_bins)
    return PolarScan(ts, res, power.astype(np.float32))


# -- point scans -------------------------------------------------------------

def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_point_scan(path, scan: PointScan) -> None:
    with_sensor = bool(np.any(scan.sensor_ids != 0))
    header = POINT_COLUMNS + (["sensor_id"] if with_sensor else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        if len(scan) == 0:
            w.writerow([repr(scan.timestamp)] + [""] * (len(header) - 1))
        for i in range(len(scan)):
            row = [repr(scan.timestamp), repr(float(scan.positions[i, 0])), repr(float(scan.positions[i, 1])),
                   repr(float(scan.ranges[i])), repr(float(scan.azimuths[i])),
                   _fmt(scan.radial_velocity[i]), _fmt(scan.power[i])]
            if with_sensor:
                row.append(str(int(scan.sensor_ids[i])))
            w.writerow(row)


def _parse_float(text: str, path, line: int) -> float:
    if text == "":
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise MalformedFile(f"{path}:{line}: not a number: {text!r}") from None


def load_point_scan(path, sigma_range: float = AUTOMOTIVE_SIGMA_RANGE,
                    sigma_azimuth: float = AUTOMOTIVE_SIGMA_AZIMUTH,
                    mounts: Sequence[Pose2] | None = None) -> PointScan:
    """Read a point-scan CSV and attach per-point measurement covariances."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedFile(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header not in (POINT_COLUMNS, POINT_COLUMNS + ["sensor_id"]):
        raise MalformedFile(f"{path}: unexpected header {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise MalformedFile(f"{path}: no rows (an empty scan still needs a timestamp row)")
    stamps, cols, sensors = [], [], []
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedFile(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        vals = [_parse_float(v.strip(), path, line) for v in row[:7]]
        if math.isnan(vals[0]):
            raise MalformedFile(f"{path}:{line}: missing timestamp")
        stamps.append(vals[0])
        if all(math.isnan(v) for v in vals[1:5]):
            continue  # timestamp-only marker row
        if any(math.isnan(v) for v in vals[1:5]):
            raise MalformedFile(f"{path}:{line}: position/range/azimuth are mandatory")
        if not math.isnan(vals[6]) and not 0.0 <= vals[6] <= 1.0:
            raise ValueOutOfRange(f"{path}:{line}: power {vals[6]} outside [0, 1]")
        if vals[3] < 0:
            raise ValueOutOfRange(f"{path}:{line}: negative range")
        cols.append(vals[1:])
        sensors.append(int(row[7]) if len(row) > 7 and row[7].strip() else 0)
    if len(set(stamps)) != 1:
        raise MalformedFile(f"{path}: rows carry different timestamps")
    if not cols:
        return PointScan.empty(stamps[0])
    a = np.array(cols)
    sensors = np.array(sensors, dtype=int)
    mount_theta = np.zeros(len(a))
    if mounts is not None:
        if sensors.max() >= len(mounts):
            raise MalformedFile(f"{path}: sensor_id {sensors.max()} has no configured mount")
        mount_theta = np.array([mounts[s].theta for s in sensors])
    covs = polar_covariance(a[:, 2], a[:, 3] + mount_theta, sigma_range, sigma_azimuth)
    return PointScan(stamps[0], a[:, 0:2], a[:, 2], a[:, 3], covs, a[:, 4], a[:, 5], sensors)


# -- trajectories -------------------------------------------------------------

def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t, p in traj:
            w.writerow([repr(float(t)), repr(p.x), repr(p.y), repr(p.theta)])


def load_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != TRAJECTORY_COLUMNS:
        raise MalformedFile(f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
    stamps, poses = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4 or any(v.strip() == "" for v in row):
            raise MalformedFile(f"{path}:{line}: expected 4 numeric fields")
        vals = [_parse_float(v.strip(), path, line) for v in row]
        stamps.append(vals[0])
        poses.append(Pose2(vals[1], vals[2], vals[3]))
    return Trajectory(stamps, poses)
