"""``radar-odom`` command line: odom, eval, synth, viz.

Exit codes: 0 success, 1 bad user input, 2 internal error.
"""

from __future__ import annotations

import argparse
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from radar_odom.errors import RadarOdomError
from radar_odom.evaluation import (
    KITTI_LENGTHS, EvalReport, format_report, frame_errors, kitti_errors, write_report_csv,
)
from radar_odom.ingest import (
    NoiseSpec, PolarGeometry, SensorRig, Trajectory, load_point_scan, load_polar_scan,
    load_trajectory, load_world, synthesize_scene, write_point_scan, write_polar_scan, write_trajectory,
)
from radar_odom.matcher import cost_surface
from radar_odom.ndt import NdtConfig, build_ndt_map
from radar_odom.pipeline import (
    PipelineConfig, config_to_text, downsample, load_config, run_odometry, write_frame_log,
)
from radar_odom.preprocess import PreprocessConfig, threshold_polar
from radar_odom.submap import Submap


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="radar-odom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("odom", help="run odometry over a scan directory")
    o.add_argument("--mode", choices=["automotive", "scanning"], required=True, help="radar type")
    o.add_argument("--config", help="complete key = value config file (default: built-in defaults for --mode)")
    o.add_argument("--input-dir", required=True, help="directory of scans (or containing scans/): *.prs or *.csv")
    o.add_argument("--output", required=True,
                   help="output directory; receives trajectory.csv (m, rad) and frames.jsonl")

    e = sub.add_parser("eval", help="score an estimated trajectory against ground truth")
    e.add_argument("--estimate", required=True, help="trajectory CSV (s, m, m, rad)")
    e.add_argument("--ground-truth", required=True, help="trajectory CSV (s, m, m, rad)")
    e.add_argument("--metric", choices=["kitti", "per-meter", "per-frame"], default="kitti",
                   help="kitti: 100-800 m segments [%%, deg/m]; per-meter: 1 m segments [%%, deg/m]; "
                        "per-frame: [m/frame, deg/frame]")
    e.add_argument("--downsample-hz", type=float, help="thin the estimate to this rate [Hz] before scoring")
    e.add_argument("--tolerance", type=float, default=0.05, help="timestamp association tolerance [s]")
    e.add_argument("--interpolate", action="store_true", help="interpolate ground truth instead of nearest match")
    e.add_argument("--out", help="also write the report as CSV here")

    s = sub.add_parser("synth", help="render a synthetic scan sequence with ground truth")
    s.add_argument("--world", required=True, help="world file (point/wall/mover lines, metres)")
    s.add_argument("--trajectory", required=True, help="vehicle trajectory CSV (s, m, m, rad)")
    s.add_argument("--mode", choices=["automotive", "scanning"], required=True, help="radar type")
    s.add_argument("--noise", default="none",
                   help="noise preset none|default|heavy, optionally with ,key=value overrides (SI units)")
    s.add_argument("--seed", type=int, default=0, help="random seed (integer)")
    s.add_argument("--rig", choices=["single", "surround"], default="single",
                   help="automotive sensor layout: one centred 360 deg sensor or five corner radars")
    s.add_argument("--azimuths", type=int, default=400, help="scanning: azimuth count per revolution")
    s.add_argument("--range-bins", type=int, default=280, help="scanning: range bins per azimuth")
    s.add_argument("--range-resolution", type=float, default=0.25, help="scanning: bin size [m]")
    s.add_argument("--out-dir", required=True, help="output directory")

    v = sub.add_parser("viz", help="export rasters (PGM) and cost surfaces (CSV)")
    what = v.add_mutually_exclusive_group(required=True)
    what.add_argument("--scan", help="polar scan (.prs) to threshold and rasterise")
    what.add_argument("--ndt-map", help="scan (.prs or .csv) to turn into an ND map raster")
    what.add_argument("--cost-surface", nargs=2, metavar=("REF", "CUR"),
                      help="two scans; exports the matching cost over a pose lattice")
    v.add_argument("--threshold", type=float, nargs="+", default=[0.333],
                   help="power threshold(s) in [0, 1]; several values give one raster each")
    v.add_argument("--grid-size", type=float, default=3.75, help="NDT cell size [m]")
    v.add_argument("--shift", type=float, default=0.333, help="power shift s in [0, 1]")
    v.add_argument("--resolution", type=float, default=0.25, help="raster pixel size [m/pixel]")
    v.add_argument("--axes", choices=["x-theta", "x-y"], default="x-theta", help="cost-surface lattice axes")
    v.add_argument("--extent", type=float, default=2.0, help="cost-surface half width along x and y [m]")
    v.add_argument("--theta-extent", type=float, default=5.0, help="cost-surface half width along theta [deg]")
    v.add_argument("--steps", type=int, default=21, help="cost-surface lattice points per axis")
    v.add_argument("--out", required=True, help="output file (.pgm or .csv)")
    return p


# -- helpers -----------------------------------------------------------------------

def _scan_files(input_dir: Path, mode: str) -> list[Path]:
    d = input_dir / "scans" if (input_dir / "scans").is_dir() else input_dir
    if not d.is_dir():
        raise RadarOdomError(f"input directory {input_dir} does not exist")
    ext = ".prs" if mode == "scanning" else ".csv"
    files = sorted(f for f in d.iterdir() if f.suffix == ext and f.name not in ("ground_truth.csv", "trajectory.csv"))
    if not files:
        raise RadarOdomError(f"no {ext} scans in {d}")
    return files


def _load_scan(path: Path, cfg: PipelineConfig | None = None):
    if path.suffix == ".prs":
        return load_polar_scan(path)
    pre = cfg.preprocess if cfg else PreprocessConfig()
    mounts = cfg.sensor_mounts if cfg else None
    return load_point_scan(path, pre.automotive_sigma_range, pre.automotive_sigma_azimuth, mounts)


def _scan_points(path: Path, threshold: float) -> Submap:
    scan = _load_scan(path)
    if path.suffix == ".prs":
        scan = threshold_polar(scan, PreprocessConfig(threshold=threshold))
    return Submap.from_scan(scan)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def rasterize_points(points: Submap, half_extent: float, resolution: float) -> np.ndarray:
    """Top-down raster (row 0 = +y), pixel value = strongest point power."""
    n = int(math.ceil(2 * half_extent / resolution))
    img = np.zeros((n, n))
    col = np.floor((points.positions[:, 0] + half_extent) / resolution).astype(int)
    row = n - 1 - np.floor((points.positions[:, 1] + half_extent) / resolution).astype(int)
    ok = (row >= 0) & (row < n) & (col >= 0) & (col < n)
    np.maximum.at(img, (row[ok], col[ok]), points.weights[ok])
    return img


def rasterize_ndt(ndt, half_extent: float, resolution: float) -> np.ndarray:
    """Density of the first grid layer: each pixel evaluates its own cell's Gaussian."""
    n = int(math.ceil(2 * half_extent / resolution))
    centres = (np.arange(n) + 0.5) * resolution - half_extent
    xx, yy = np.meshgrid(centres, centres[::-1])
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    idx = ndt.lookup(0, pts)
    ok = idx >= 0
    lay = ndt.layers[0]
    d = pts[ok] - lay.means[idx[ok]]
    q = np.einsum("ni,nij,nj->n", d, lay.cov_inverses[idx[ok]], d)
    out = np.zeros(len(pts))
    out[ok] = np.exp(-0.5 * q)
    return out.reshape(n, n)


# -- commands --------------------------------------------------------------------

def cmd_odom(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig.defaults(args.mode)
    if cfg.mode != args.mode:
        raise RadarOdomError(f"--mode {args.mode} disagrees with config mode {cfg.mode}")
    scans = [_load_scan(f, cfg) for f in _scan_files(Path(args.input_dir), cfg.mode)]
    out = run_odometry(scans, cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory(outdir / "trajectory.csv", out.trajectory)
    write_frame_log(outdir / "frames.jsonl", out)
    print(f"{len(out.trajectory)} poses, {out.stats['escalated_frames']} escalated frames, "
          f"{out.stats['fallbacks']} fallbacks -> {outdir}")
    return 0


def cmd_eval(args) -> int:
    est = load_trajectory(args.estimate)
    gt = load_trajectory(args.ground_truth)
    if args.downsample_hz:
        kept = downsample([_Stamp(t) for t in est.timestamps], args.downsample_hz)
        keep = {k.timestamp for k in kept}
        est = Trajectory([t for t in est.timestamps if t in keep],
                         [p for t, p in est if t in keep])
    if args.metric == "kitti":
        report = kitti_errors(est, gt, KITTI_LENGTHS, args.tolerance, args.interpolate)
    elif args.metric == "per-meter":
        report = kitti_errors(est, gt, (1.0,), args.tolerance, args.interpolate)
    else:
        trans, rot = frame_errors(est, gt, args.tolerance, args.interpolate)
        report = EvalReport(float("nan"), float("nan"), trans, rot, {})
    if args.metric == "per-frame":
        print(f"translation {report.mean_frame_translation_m:.6f} m/frame, "
              f"rotation {report.mean_frame_rotation_deg:.6f} deg/frame")
    else:
        print(format_report(report))
    if args.out:
        if args.metric == "per-frame":
            with open(args.out, "w") as fh:
                fh.write("frame,translation_m,rotation_deg\n")
                for k, (t, r) in enumerate(zip(report.per_frame_translation_m, report.per_frame_rotation_deg), 1):
                    fh.write(f"{k},{t!r},{r!r}\n")
        else:
            write_report_csv(args.out, report)
    return 0


class _Stamp:
    def __init__(self, t: float) -> None:
        self.timestamp = t


def cmd_synth(args) -> int:
    world = load_world(args.world)
    traj = load_trajectory(args.trajectory)
    try:
        noise = NoiseSpec.parse(args.noise)
    except ValueError as exc:
        raise RadarOdomError(str(exc)) from None
    rig = SensorRig.surround() if args.rig == "surround" else SensorRig()
    geom = PolarGeometry(args.azimuths, args.range_bins, args.range_resolution)
    seq = synthesize_scene(world, traj, args.mode, noise, args.seed, rig, geom)
    out = Path(args.out_dir)
    if out.exists():
        shutil.rmtree(out / "scans", ignore_errors=True)
        shutil.rmtree(out / "labels", ignore_errors=True)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    for k, (scan, labels) in enumerate(zip(seq.scans, seq.labels)):
        if args.mode == "scanning":
            write_polar_scan(out / "scans" / f"{k:06d}.prs", scan)
        else:
            write_point_scan(out / "scans" / f"{k:06d}.csv", scan)
        np.save(out / "labels" / f"{k:06d}.npy", labels)
    write_trajectory(out / "ground_truth.csv", seq.ground_truth)
    cfg = PipelineConfig.defaults(args.mode)
    if args.mode == "automotive":
        cfg.sensor_mounts = list(rig.mounts)
    (out / "config.cfg").write_text(config_to_text(cfg))
    print(f"{len(seq.scans)} {args.mode} scans -> {out}")
    return 0


def cmd_viz(args) -> int:
    out = Path(args.out)
    if args.scan:
        scan = load_polar_scan(args.scan)
        half = min(scan.range_bin_count * scan.range_resolution, PreprocessConfig().max_range_scanning)
        multi = len(args.threshold) > 1
        for thr in args.threshold:
            pts = Submap.from_scan(threshold_polar(scan, PreprocessConfig(threshold=thr)))
            target = out.with_name(f"{out.stem}_t{thr:g}{out.suffix or '.pgm'}") if multi else out
            write_pgm(target, rasterize_points(pts, half, args.resolution))
        return 0
    if args.ndt_map:
        pts = _scan_points(Path(args.ndt_map), args.threshold[0])
        ndt = build_ndt_map(pts, NdtConfig(args.grid_size, args.shift))
        half = float(np.abs(pts.positions).max()) + args.grid_size
        write_pgm(out, rasterize_ndt(ndt, half, args.resolution))
        return 0
    ref = _scan_points(Path(args.cost_surface[0]), args.threshold[0])
    cur = _scan_points(Path(args.cost_surface[1]), args.threshold[0])
    ndt = build_ndt_map(ref, NdtConfig(args.grid_size, args.shift))
    a = np.linspace(-args.extent, args.extent, args.steps)
    if args.axes == "x-theta":
        b = np.linspace(-math.radians(args.theta_extent), math.radians(args.theta_extent), args.steps)
        b_label = [repr(math.degrees(v)) for v in b]
        corner = "x_m\\theta_deg"
    else:
        b = a.copy()
        b_label = [repr(float(v)) for v in b]
        corner = "x_m\\y_m"
    surf = cost_surface(ndt, cur, args.shift, a, b, args.axes)
    with open(out, "w") as fh:
        fh.write(",".join([corner] + b_label) + "\n")
        for i, av in enumerate(a):
            fh.write(",".join([repr(float(av))] + [repr(float(c)) for c in surf[i]]) + "\n")
    return 0


COMMANDS = {"odom": cmd_odom, "eval": cmd_eval, "synth": cmd_synth, "viz": cmd_viz}


def _thread_cap() -> int:
    raw = os.environ.get("RADAR_ODOM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RADAR_ODOM_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("RADAR_ODOM_THREADS must be a non-negative integer")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = _thread_cap()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except (RadarOdomError, OSError, ValueError) as exc:
        print(f"radar-odom {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"radar-odom {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
