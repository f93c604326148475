"""Synthetic worlds and radar scans with ground truth.

A world is a list of primitives read from a small text format::

    # comment
    point x y reflectivity
    wall x1 y1 x2 y2 reflectivity
    mover x y vx vy reflectivity

Movers translate with constant world velocity from their position at t=0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from radar_odom.core import Pose2, between, compose, exp_twist, log_twist, polar_covariance, transform_point
from radar_odom.errors import EmptyWorld, MalformedFile, ValueOutOfRange
from radar_odom.ingest.formats import (
    AUTOMOTIVE_SIGMA_AZIMUTH, AUTOMOTIVE_SIGMA_RANGE, PointScan, PolarScan, Trajectory,
)

POINT_RADIUS = 0.3
MOVER_RADIUS = 1.0

# label codes for polar bins
EMPTY, LANDMARK, MOVER, SPECKLE, GHOST, SATURATION = range(6)


@dataclass
class WorldSpec:
    points: list[tuple[float, float, float]] = field(default_factory=list)
    walls: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    movers: list[tuple[float, float, float, float, float]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.points or self.walls or self.movers)

    def mover_positions(self, t: float) -> np.ndarray:
        m = np.array(self.movers, dtype=float).reshape(-1, 5)
        return m[:, 0:2] + t * m[:, 2:4]

    def to_text(self) -> str:
        lines = [f"point {' '.join(repr(float(v)) for v in p)}" for p in self.points]
        lines += [f"wall {' '.join(repr(float(v)) for v in w)}" for w in self.walls]
        lines += [f"mover {' '.join(repr(float(v)) for v in m)}" for m in self.movers]
        return "\n".join(lines) + "\n"


_ARITY = {"point": 3, "wall": 5, "mover": 5}


def parse_world(text: str, source: str = "<world>") -> WorldSpec:
    world = WorldSpec()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        if kind not in _ARITY:
            raise MalformedFile(f"{source}:{lineno}: unknown primitive {kind!r}")
        if len(rest) != _ARITY[kind]:
            raise MalformedFile(f"{source}:{lineno}: {kind} takes {_ARITY[kind]} numbers")
        try:
            vals = tuple(float(v) for v in rest)
        except ValueError:
            raise MalformedFile(f"{source}:{lineno}: non-numeric field") from None
        if not 0.0 <= vals[-1] <= 1.0:
            raise ValueOutOfRange(f"{source}:{lineno}: reflectivity must lie in [0, 1]")
        {"point": world.points, "wall": world.walls, "mover": world.movers}[kind].append(vals)
    return world


def load_world(path) -> WorldSpec:
    return parse_world(Path(path).read_text(), str(path))


@dataclass
class NoiseSpec:
    """Noise model. Everything defaults to off; see :meth:`preset`."""

    range_sigma: float = 0.0          # m, automotive detections
    azimuth_sigma: float = 0.0        # rad, automotive detections
    doppler_sigma: float = 0.0        # m/s
    detection_probability: float = 1.0
    wall_density: float = 0.5         # automotive detections per metre of wall per scan
    mover_points: int = 4             # automotive detections per mover per scan
    return_spread_bins: float = 1.0   # range blur (std, bins) of a polar return
    power_jitter: float = 0.0         # relative std of landmark return power
    speckle_density: float = 0.0      # fraction of polar bins hit by speckle
    speckle_max_power: float = 0.3
    ghost_probability: float = 0.0    # per strong azimuth return
    ghost_attenuation: float = 0.45
    ghost_min_power: float = 0.6
    saturation_probability: float = 0.0  # per scan
    saturation_width: int = 2            # azimuths per streak
    saturation_range: float = 20.0       # m

    @classmethod
    def preset(cls, name: str) -> NoiseSpec:
        if name in ("none", "noiseless"):
            return cls()
        if name == "default":
            return cls(range_sigma=0.1, azimuth_sigma=math.radians(0.5), doppler_sigma=0.1,
                       detection_probability=0.9, power_jitter=0.05, speckle_density=0.05,
                       ghost_probability=0.1, saturation_probability=0.1)
        if name == "heavy":
            return cls(range_sigma=0.2, azimuth_sigma=math.radians(1.0), doppler_sigma=0.2,
                       detection_probability=0.7, power_jitter=0.1, speckle_density=0.15,
                       ghost_probability=0.35, saturation_probability=0.3)
        raise ValueError(f"unknown noise preset {name!r}")

    @classmethod
    def parse(cls, text: str) -> NoiseSpec:
        """Preset name, optionally followed by ``,key=value`` overrides."""
        head, *overrides = [t.strip() for t in text.split(",") if t.strip()]
        spec = cls() if "=" in head else cls.preset(head)
        if "=" in head:
            overrides.insert(0, head)
        types = {f.name: f.type for f in fields(cls)}
        for item in overrides:
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in types:
                raise ValueError(f"unknown noise parameter {key!r}")
            spec = replace(spec, **{key: int(val) if types[key] == "int" else float(val)})
        return spec


@dataclass
class SensorRig:
    mounts: list[Pose2] = field(default_factory=lambda: [Pose2()])
    fov: float = 2.0 * math.pi
    max_range: float = 100.0

    @classmethod
    def surround(cls) -> SensorRig:
        """Five corner/front radars covering 360 degrees around a passenger car."""
        d = math.radians
        mounts = [Pose2(3.6, 0.0, 0.0), Pose2(3.4, 0.8, d(80)), Pose2(3.4, -0.8, d(-80)),
                  Pose2(-1.0, 0.8, d(170)), Pose2(-1.0, -0.8, d(-170))]
        return cls(mounts, fov=d(120), max_range=100.0)


@dataclass
class PolarGeometry:
    azimuth_count: int = 400
    range_bin_count: int = 280
    range_resolution: float = 0.25


@dataclass
class SyntheticSequence:
    mode: str
    scans: list
    ground_truth: Trajectory
    labels: list[np.ndarray]
    velocities: np.ndarray  # (n, 3) body twist rates (vx, vy, omega) at each scan


# -- trajectories ---------------------------------------------------------------

def constant_twist_trajectory(vx: float, vy: float, omega: float, dt: float, n: int,
                              start: Pose2 = Pose2(), t0: float = 0.0) -> Trajectory:
    step = exp_twist(vx * dt, vy * dt, omega * dt)
    poses = [start]
    for _ in range(n - 1):
        poses.append(compose(poses[-1], step))
    return Trajectory(t0 + dt * np.arange(n), poses)


def body_velocities(traj: Trajectory) -> np.ndarray:
    """Constant body twist over the interval ending at each pose (first pose uses the first interval)."""
    n = len(traj)
    out = np.zeros((n, 3))
    for k in range(1, n):
        dt = traj.timestamps[k] - traj.timestamps[k - 1]
        out[k] = log_twist(between(traj.poses[k - 1], traj.poses[k])) / dt
    if n > 1:
        out[0] = out[1]
    return out


# -- ray casting -------------------------------------------------------------------

def _ray_segments(origin, dirs, walls) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit range along each ray against wall segments, and the hit wall index."""
    n = len(dirs)
    best = np.full(n, np.inf)
    idx = np.full(n, -1)
    if not walls:
        return best, idx
    w = np.asarray(walls, dtype=float)
    p = w[:, 0:2]
    e = w[:, 2:4] - p
    q = p - origin  # (m, 2)
    dx, dy = dirs[:, 0:1], dirs[:, 1:2]
    denom = dx * e[None, :, 1] - dy * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (q[None, :, 0] * e[None, :, 1] - q[None, :, 1] * e[None, :, 0]) / denom
        t = (q[None, :, 0] * dy - q[None, :, 1] * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (r > 1e-9) & (t >= 0) & (t <= 1)
    r = np.where(ok, r, np.inf)
    j = np.argmin(r, axis=1)
    return r[np.arange(n), j], np.where(np.isfinite(r[np.arange(n), j]), j, -1)


def _ray_discs(origin, dirs, centers, radius) -> tuple[np.ndarray, np.ndarray]:
    n = len(dirs)
    if len(centers) == 0:
        return np.full(n, np.inf), np.full(n, -1)
    c = np.asarray(centers, dtype=float) - origin
    proj = dirs @ c.T  # (n, m)
    perp2 = np.sum(c * c, axis=1)[None, :] - proj**2
    disc = radius**2 - perp2
    with np.errstate(invalid="ignore"):
        r = proj - np.sqrt(disc)
    r = np.where((disc >= 0) & (r > 1e-9), r, np.inf)
    j = np.argmin(r, axis=1)
    best = r[np.arange(n), j]
    return best, np.where(np.isfinite(best), j, -1)


# -- scan synthesis --------------------------------------------------------------

def _radial_velocity(az_sensor, v_rel_sensor) -> np.ndarray:
    return np.cos(az_sensor) * v_rel_sensor[:, 0] + np.sin(az_sensor) * v_rel_sensor[:, 1]


def _automotive_scan(world: WorldSpec, pose: Pose2, twist: np.ndarray, t: float,
                     rig: SensorRig, noise: NoiseSpec, rng: np.random.Generator):
    cands, moving_vel = [], []
    for x, y, _ in world.points:
        if rng.random() < noise.detection_probability:
            cands.append((x, y))
            moving_vel.append((0.0, 0.0))
    for x1, y1, x2, y2, _ in world.walls:
        length = math.hypot(x2 - x1, y2 - y1)
        for u in rng.random(rng.poisson(length * noise.wall_density)):
            cands.append((x1 + u * (x2 - x1), y1 + u * (y2 - y1)))
            moving_vel.append((0.0, 0.0))
    for (mx, my), (_, _, vx, vy, _) in zip(world.mover_positions(t), world.movers):
        for _ in range(noise.mover_points):
            rr = MOVER_RADIUS * math.sqrt(rng.random())
            aa = 2 * math.pi * rng.random()
            cands.append((mx + rr * math.cos(aa), my + rr * math.sin(aa)))
            moving_vel.append((vx, vy))
    cands = np.array(cands, dtype=float).reshape(-1, 2)
    moving_vel = np.array(moving_vel, dtype=float).reshape(-1, 2)
    static = np.all(moving_vel == 0.0, axis=1)

    vx, vy, om = twist
    taken = np.zeros(len(cands), dtype=bool)
    cols = {k: [] for k in ("pos", "rng", "az", "vr", "sid", "lab", "cov")}
    for sid, mount in enumerate(rig.mounts):
        spose = compose(pose, mount)
        local = transform_point(spose.inverse(), cands) if len(cands) else cands
        r_true = np.hypot(local[:, 0], local[:, 1])
        a_true = np.arctan2(local[:, 1], local[:, 0])
        vis = (~taken) & (r_true <= rig.max_range) & (np.abs(a_true) <= rig.fov / 2) & (r_true > 0)
        if not np.any(vis):
            continue
        taken |= vis
        r_true, a_true = r_true[vis], a_true[vis]
        # sensor velocity, vehicle frame then sensor frame
        vs_vehicle = np.array([vx - om * mount.y, vy + om * mount.x])
        c, s = math.cos(mount.theta), math.sin(mount.theta)
        vs_sensor = np.array([c * vs_vehicle[0] + s * vs_vehicle[1], -s * vs_vehicle[0] + c * vs_vehicle[1]])
        cw, sw = math.cos(spose.theta), math.sin(spose.theta)
        mv = moving_vel[vis]
        mv_sensor = np.stack([cw * mv[:, 0] + sw * mv[:, 1], -sw * mv[:, 0] + cw * mv[:, 1]], axis=1)
        vr = _radial_velocity(a_true, mv_sensor - vs_sensor[None, :])
        n = len(r_true)
        r_meas = np.maximum(r_true + noise.range_sigma * rng.standard_normal(n), 0.0)
        a_meas = a_true + noise.azimuth_sigma * rng.standard_normal(n)
        vr = vr + noise.doppler_sigma * rng.standard_normal(n)
        pos = transform_point(mount, np.stack([r_meas * np.cos(a_meas), r_meas * np.sin(a_meas)], axis=1))
        cols["pos"].append(pos)
        cols["rng"].append(r_meas)
        cols["az"].append(a_meas)
        cols["vr"].append(vr)
        cols["sid"].append(np.full(n, sid))
        cols["lab"].append(static[vis])
        cols["cov"].append(polar_covariance(r_meas, a_meas + mount.theta,
                                            AUTOMOTIVE_SIGMA_RANGE, AUTOMOTIVE_SIGMA_AZIMUTH))
    if not cols["pos"]:
        return PointScan.empty(t), np.zeros(0, dtype=bool)
    cat = {k: np.concatenate(v) for k, v in cols.items()}
    n = len(cat["rng"])
    scan = PointScan(t, cat["pos"], cat["rng"], cat["az"], cat["cov"], cat["vr"],
                     np.full(n, np.nan), cat["sid"])
    return scan, cat["lab"]


def _stamp(power, labels, az, bins, values, label):
    stronger = values > power[az, bins]
    power[az[stronger], bins[stronger]] = values[stronger]
    labels[az[stronger], bins[stronger]] = label


def _polar_scan(world: WorldSpec, pose: Pose2, t: float, geom: PolarGeometry,
                noise: NoiseSpec, rng: np.random.Generator):
    n_az, n_bins, res = geom.azimuth_count, geom.range_bin_count, geom.range_resolution
    az = 2.0 * np.pi * np.arange(n_az) / n_az
    world_az = az + pose.theta
    dirs = np.stack([np.cos(world_az), np.sin(world_az)], axis=1)
    origin = pose.translation

    hits = [(_ray_segments(origin, dirs, world.walls), [w[4] for w in world.walls], LANDMARK),
            (_ray_discs(origin, dirs, [p[:2] for p in world.points], POINT_RADIUS),
             [p[2] for p in world.points], LANDMARK),
            (_ray_discs(origin, dirs, world.mover_positions(t), MOVER_RADIUS),
             [m[4] for m in world.movers], MOVER)]
    best = np.full(n_az, np.inf)
    refl = np.zeros(n_az)
    kind = np.zeros(n_az, dtype=np.int8)
    for (r, j), reflect, lab in hits:
        closer = r < best
        best[closer] = r[closer]
        refl[closer] = np.asarray(reflect, dtype=float)[j[closer]]
        kind[closer] = lab

    power = np.zeros((n_az, n_bins))
    labels = np.zeros((n_az, n_bins), dtype=np.int8)
    hit = np.isfinite(best) & (best < n_bins * res)
    if noise.power_jitter > 0:
        refl = np.clip(refl * (1 + noise.power_jitter * rng.standard_normal(n_az)), 0.0, 1.0)

    def render(az_idx, ranges, peak, label):
        centre = ranges / res - 0.5
        if noise.return_spread_bins <= 0:
            b = np.rint(centre).astype(int)
            ok = (b >= 0) & (b < n_bins)
            _stamp(power, labels, az_idx[ok], b[ok], peak[ok], label)
            return
        half = int(math.ceil(3 * noise.return_spread_bins))
        for off in range(-half, half + 1):
            b = np.rint(centre).astype(int) + off
            ok = (b >= 0) & (b < n_bins)
            val = peak * np.exp(-0.5 * ((b - centre) / noise.return_spread_bins) ** 2)
            _stamp(power, labels, az_idx[ok], b[ok], val[ok], label)

    idx = np.nonzero(hit)[0]
    for lab in (LANDMARK, MOVER):
        sel = idx[kind[idx] == lab]
        render(sel, best[sel], refl[sel], lab)

    if noise.ghost_probability > 0:
        strong = idx[(refl[idx] >= noise.ghost_min_power)]
        ghost = strong[rng.random(len(strong)) < noise.ghost_probability]
        render(ghost, 2.0 * best[ghost], refl[ghost] * noise.ghost_attenuation, GHOST)

    if noise.speckle_density > 0:
        mask = rng.random((n_az, n_bins)) < noise.speckle_density
        vals = rng.random((n_az, n_bins)) * noise.speckle_max_power
        a_i, b_i = np.nonzero(mask)
        _stamp(power, labels, a_i, b_i, vals[mask], SPECKLE)

    if noise.saturation_probability > 0 and rng.random() < noise.saturation_probability:
        start = int(rng.integers(n_az))
        n_sat = min(n_bins, int(noise.saturation_range / res))
        for a_i in (start + np.arange(noise.saturation_width)) % n_az:
            power[a_i, :n_sat] = 1.0
            labels[a_i, :n_sat] = SATURATION

    return PolarScan(t, res, np.clip(power, 0.0, 1.0)), labels


def synthesize_scene(world: WorldSpec, trajectory: Trajectory, mode: str,
                     noise: NoiseSpec | None = None, seed: int = 0,
                     rig: SensorRig | None = None,
                     geometry: PolarGeometry | None = None) -> SyntheticSequence:
    """Render one scan per trajectory pose.

    Automotive scans carry Doppler and per-point labels (True = static
    world). Scanning scans are polar power images with per-bin label codes.
    """
    if world.is_empty():
        raise EmptyWorld("world has no landmarks")
    if mode not in ("automotive", "scanning"):
        raise ValueError(f"unknown mode {mode!r}")
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(seed)
    twists = body_velocities(trajectory)
    scans, labels = [], []
    for k, (t, pose) in enumerate(trajectory):
        if mode == "automotive":
            scan, lab = _automotive_scan(world, pose, twists[k], t, rig or SensorRig(), noise, rng)
        else:
            scan, lab = _polar_scan(world, pose, t, geometry or PolarGeometry(), noise, rng)
        scans.append(scan)
        labels.append(lab)
    return SyntheticSequence(mode, scans, trajectory, labels, twists)


# -- ready-made worlds -------------------------------------------------------------

def urban_world(rng: np.random.Generator, half_size: float = 60.0, n_points: int = 40,
                n_walls: int = 14, movers: Sequence[tuple] = ()) -> WorldSpec:
    """Random city-block-like scene: building facades plus scattered poles."""
    world = WorldSpec()
    for _ in range(n_walls):
        cx, cy = rng.uniform(-half_size, half_size, 2)
        ang = rng.choice([0.0, math.pi / 2]) + rng.normal(0, 0.15)
        length = rng.uniform(6, 20)
        dx, dy = 0.5 * length * math.cos(ang), 0.5 * length * math.sin(ang)
        world.walls.append((cx - dx, cy - dy, cx + dx, cy + dy, float(rng.uniform(0.6, 1.0))))
    for _ in range(n_points):
        x, y = rng.uniform(-half_size, half_size, 2)
        world.points.append((float(x), float(y), float(rng.uniform(0.6, 1.0))))
    world.movers.extend(movers)
    return world


def dense_point_scene(rng: np.random.Generator, n_walls: int = 10, n_blobs: int = 12,
                      extent: float = 30.0, spacing: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """World-frame points densely sampled along walls and around blobs, with power."""
    pts, power = [], []
    for _ in range(n_walls):
        c = rng.uniform(-extent, extent, 2)
        ang = rng.uniform(0, math.pi)
        length = rng.uniform(5, 15)
        u = np.arange(-length / 2, length / 2, spacing)
        seg = c + np.outer(u, [math.cos(ang), math.sin(ang)])
        pts.append(seg)
        power.append(np.full(len(u), rng.uniform(0.5, 1.0)))
    for _ in range(n_blobs):
        c = rng.uniform(-extent, extent, 2)
        blob = c + 0.5 * rng.standard_normal((25, 2))
        pts.append(blob)
        power.append(np.full(25, rng.uniform(0.5, 1.0)))
    return np.concatenate(pts), np.concatenate(power)
