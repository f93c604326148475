"""Frame-to-frame odometry loop for both radar types, and its configuration file."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from radar_odom.core import Pose2, compose, exp_twist, log_twist
from radar_odom.egomotion import EgoVelocityEstimate, estimate_ego_velocity, integrate_velocity
from radar_odom.errors import ConfigError, InsufficientDoppler, InsufficientInput
from radar_odom.ingest.formats import PointScan, PolarScan, Trajectory, check_monotonic
from radar_odom.matcher import MOTION_PRIOR, MatchConfig, MatchResult, match_with_escalation
from radar_odom.ndt import NdtConfig, build_ndt_map
from radar_odom.preprocess import PreprocessConfig, gate_and_filter_automotive, threshold_polar
from radar_odom.submap import Submap, build_submap

MODES = ("automotive", "scanning")
# motion uncertainty used for submap stacking when Doppler is unavailable
FALLBACK_MOTION_COV = np.diag([0.1, 0.1, 0.01])


@dataclass
class PipelineConfig:
    mode: str = "automotive"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    ndt: NdtConfig = field(default_factory=NdtConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    submap_n: int = 3
    sensor_mounts: list[Pose2] = field(default_factory=lambda: [Pose2()])
    downsample_hz: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.submap_n < 1:
            raise ConfigError("submap_n must be >= 1")
        if self.mode == "scanning":
            self.submap_n = 1
        if not self.sensor_mounts:
            raise ConfigError("at least one sensor mount is required")
        if self.downsample_hz is not None and not self.downsample_hz > 0:
            raise ConfigError("downsample_hz must be positive")

    @classmethod
    def defaults(cls, mode: str) -> PipelineConfig:
        if mode == "scanning":
            return cls(mode, PreprocessConfig(threshold=0.333), NdtConfig(grid_size=3.75, shift_s=0.333),
                       MatchConfig(), submap_n=1)
        return cls(mode, PreprocessConfig(), NdtConfig(grid_size=3.0, shift_s=0.0), MatchConfig(), submap_n=3)


@dataclass
class OdometryOutput:
    trajectory: Trajectory
    per_frame: list[MatchResult]
    stats: dict


def downsample(scans: Sequence, target_hz: float) -> list:
    """Greedy: keep the first scan, then every scan at least ``1/target_hz`` after the last kept one."""
    if not target_hz > 0:
        raise ValueError("target_hz must be positive")
    period = 1.0 / target_hz
    slack = 1e-9 * period  # absorbs rounding in timestamps such as k / 13
    kept = []
    for scan in scans:
        if not kept or scan.timestamp >= kept[-1].timestamp + period - slack:
            kept.append(scan)
    return kept


def _predict(prev_motion: Pose2 | None, prev_dt: float | None, dt: float) -> Pose2:
    if prev_motion is None:
        return Pose2()
    twist = log_twist(prev_motion) * (dt / prev_dt)
    return exp_twist(*twist)


def run_odometry(scan_source: Sequence, cfg: PipelineConfig) -> OdometryOutput:
    """Consecutive scan matching; the first pose is the identity.

    Scanning: threshold each image and match it against the previous one.
    Automotive: Doppler ego-velocity, Doppler gating, and matching of the
    current scan against a submap of the previous ``submap_n`` scans.
    """
    scans = list(scan_source)
    if cfg.downsample_hz:
        scans = downsample(scans, cfg.downsample_hz)
    if len(scans) < 2:
        raise InsufficientInput("odometry needs at least two scans")
    check_monotonic([s.timestamp for s in scans])
    expected = PolarScan if cfg.mode == "scanning" else PointScan
    if not all(isinstance(s, expected) for s in scans):
        raise InsufficientInput(f"{cfg.mode} mode expects {expected.__name__} inputs")

    poses = [Pose2()]
    results: list[MatchResult] = []
    prev_motion, prev_dt, prev_speed = None, None, None

    clean: list[PointScan] = []
    motions: list[tuple[Pose2, np.ndarray]] = []
    for k, scan in enumerate(scans):
        ego = None
        if cfg.mode == "scanning":
            cur = threshold_polar(scan, cfg.preprocess)
        else:
            ego = _ego(scan, cfg, k)
            cur = gate_and_filter_automotive(scan, ego, cfg.preprocess) if ego.valid else \
                scan.subset(scan.ranges <= cfg.preprocess.max_range_automotive)
        if k == 0:
            clean.append(cur)
            continue

        dt = scan.timestamp - scans[k - 1].timestamp
        prediction = _predict(prev_motion, prev_dt, dt)
        motion_cov = FALLBACK_MOTION_COV
        ref_speed = prev_speed
        if ego is not None and ego.valid:
            prediction, motion_cov = integrate_velocity(ego, dt)
            ref_speed = ego.speed

        first = max(0, len(clean) - cfg.submap_n)
        reference = build_submap(clean[first:], motions[first:], cfg.submap_n)

        def builder(g: float, s: float, _ref: Submap = reference) -> object:
            ndt_cfg = NdtConfig(g, s, cfg.ndt.min_points_per_cell, cfg.ndt.cov_condition_cap, cfg.ndt.probabilistic)
            return build_ndt_map(_ref, ndt_cfg)

        result = match_with_escalation(builder, Submap.from_scan(cur), prediction, prediction, ref_speed, dt,
                                       cfg.match, cfg.ndt.shift_s, cfg.ndt.grid_size)
        results.append(result)
        rel = result.relative_pose
        poses.append(compose(poses[-1], rel))
        motions.append((prediction, motion_cov))
        clean.append(cur)
        if len(clean) > cfg.submap_n:
            clean.pop(0)
            motions.pop(0)
        prev_motion, prev_dt, prev_speed = rel, dt, math.hypot(rel.x, rel.y) / dt

    stats = {
        "frames": len(scans),
        "escalated_frames": sum(1 for r in results if len(r.attempts) > 1),
        "grid_escalations": sum(r.grid_escalations for r in results),
        "shift_halvings": sum(r.shift_halvings for r in results),
        "fallbacks": sum(1 for r in results if r.failure_reason == MOTION_PRIOR),
    }
    return OdometryOutput(Trajectory([s.timestamp for s in scans], poses), results, stats)


def _ego(scan: PointScan, cfg: PipelineConfig, k: int) -> EgoVelocityEstimate:
    try:
        return estimate_ego_velocity(scan, cfg.sensor_mounts, cfg.preprocess, seed=cfg.rng_seed + k)
    except InsufficientDoppler:
        return EgoVelocityEstimate.invalid(cfg.sensor_mounts)


def frame_record(frame: int, timestamp: float, r: MatchResult) -> dict:
    return {
        "frame": frame,
        "timestamp": timestamp,
        "x": r.relative_pose.x,
        "y": r.relative_pose.y,
        "theta": r.relative_pose.theta,
        "score": r.score,
        "iterations": r.iterations,
        "converged": r.converged,
        "grid_size_used": r.grid_size_used,
        "shift_used": r.shift_used,
        "failure_reason": r.failure_reason,
        "grid_escalations": r.grid_escalations,
        "shift_halvings": r.shift_halvings,
        "attempts": r.attempts,
    }


def write_frame_log(path, output: OdometryOutput) -> None:
    ts = output.trajectory.timestamps
    with open(path, "w") as fh:
        for k, r in enumerate(output.per_frame, start=1):
            fh.write(json.dumps(frame_record(k, float(ts[k]), r), sort_keys=True) + "\n")


def read_frame_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- config file -----------------------------------------------------------------
#
# Flat ``key = value`` lines, ``#`` comments. Angles are in degrees in the file.

_SECTIONS = {"preprocess": PreprocessConfig, "ndt": NdtConfig, "match": MatchConfig}
_DEGREE_KEYS = {"preprocess.scanning_sigma_azimuth", "preprocess.automotive_sigma_azimuth"}


def _file_key(section: str, name: str) -> str:
    key = f"{section}.{name}"
    return key + "_deg" if key in _DEGREE_KEYS else key


def config_keys() -> list[str]:
    keys = ["mode", "submap_n", "sensor_mounts", "downsample_hz", "rng_seed"]
    for section, cls in _SECTIONS.items():
        keys += [_file_key(section, f.name) for f in fields(cls)]
    return keys


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def config_to_text(cfg: PipelineConfig) -> str:
    lines = [f"mode = {cfg.mode}", f"submap_n = {cfg.submap_n}",
             "sensor_mounts = " + "; ".join(f"{m.x!r}, {m.y!r}, {math.degrees(m.theta)!r}" for m in cfg.sensor_mounts),
             f"downsample_hz = {_format(cfg.downsample_hz)}", f"rng_seed = {cfg.rng_seed}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            key = _file_key(section, f.name)
            if key in _DEGREE_KEYS:
                v = math.degrees(v)
            lines.append(f"{key} = {_format(v)}")
    return "\n".join(lines) + "\n"


def _convert(key: str, text: str, annotation: str):
    t = text.strip()
    try:
        if "None" in annotation and t.lower() in ("none", "auto", ""):
            return None
        if annotation.startswith("bool"):
            if t.lower() not in ("true", "false"):
                raise ValueError
            return t.lower() == "true"
        if annotation.startswith("int"):
            return int(t)
        return float(t)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    """Parse a complete config file; every key from :func:`config_keys` is required."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        raw[key] = value.strip()
    known = config_keys()
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{source}: unknown key {unknown[0]}")
    for key in known:
        if key not in raw:
            raise ConfigError(f"{source}: missing config key {key}")

    sections = {}
    for section, cls in _SECTIONS.items():
        kwargs = {}
        for f in fields(cls):
            key = _file_key(section, f.name)
            v = _convert(key, raw[key], str(f.type))
            if key in _DEGREE_KEYS and v is not None:
                v = math.radians(v)
            kwargs[f.name] = v
        sections[section] = cls(**kwargs)
    mounts = []
    for chunk in raw["sensor_mounts"].split(";"):
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"sensor_mounts: expected 'x, y, theta_deg' per mount, got {chunk!r}")
        x, y, th = (_convert("sensor_mounts", p, "float") for p in parts)
        mounts.append(Pose2(x, y, math.radians(th)))
    return PipelineConfig(
        raw["mode"], sections["preprocess"], sections["ndt"], sections["match"],
        _convert("submap_n", raw["submap_n"], "int"), mounts,
        _convert("downsample_hz", raw["downsample_hz"], "float | None"),
        _convert("rng_seed", raw["rng_seed"], "int"),
    )


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(), str(path))
