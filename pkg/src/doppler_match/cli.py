"""``doppler-match`` command line: synth, odom, eval, bench."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import Trajectory, Twist, compose, inverse
from .errors import DopplerMatchError
from .evaluation import (
    DEFAULT_SEGMENTS,
    absolute_pose_error,
    format_segment_table,
    relative_error,
    segment_csv,
    timing_report,
)
from .io import (
    Config,
    write_text,
    read_config,
    read_dataset,
    read_trajectory,
    write_dataset,
    write_trajectory,
)
from .registration import Method, OdometryRun, Seeding, run_odometry
from .simulator import MotionProfile, NoiseSpec, SceneSpec, generate_scene, simulate_trajectory

log = logging.getLogger("doppler_match")


def _config(args, required: Sequence[str] = ()) -> Config:
    return read_config(args.config, args.set or (), required)


def _report_paths(out: Path) -> tuple[Path, Path]:
    stem = out.with_suffix("") if out.suffix else out
    return Path(f"{stem}_report.txt"), Path(f"{stem}_report.csv")


# synth ----------------------------------------------------------------------


def synth(cfg: Config, out_dir) -> Path:
    spec = SceneSpec(cfg.scene, cfg.extent, cfg.point_count, cfg.scene_seed)
    scene = generate_scene(spec)
    profile = MotionProfile.constant(Twist(cfg.omega, cfg.rho), cfg.frames, cfg.delta_t)
    noise = NoiseSpec(
        position_sigma=cfg.position_sigma,
        doppler_sigma=cfg.doppler_sigma,
        dropout_rate=cfg.dropout_rate,
        dynamic_point_fraction=cfg.dynamic_point_fraction,
        dynamic_speed=cfg.dynamic_speed,
        rng_seed=cfg.noise_seed,
    )
    sim = simulate_trajectory(scene, profile, noise)
    gt = Trajectory(sim.timestamps, tuple(sim.poses))
    meta = [f"# doppler-match {__version__} synthetic dataset", *cfg.resolved_lines()]
    return write_dataset(out_dir, sim.scans, gt, meta)


# odom -----------------------------------------------------------------------


def run_report(run: OdometryRun, cfg: Config) -> tuple[str, str]:
    """Plain-text and CSV run reports. Only ``elapsed_ms`` varies between runs."""
    times = timing_report([f.elapsed for f in run.frames])
    lines = [
        f"method: {run.method.value}",
        f"seeding: {run.seeding.value} ({'enabled' if run.seeding is Seeding.CONSTANT_VELOCITY else 'disabled'})",
        f"frames: {len(run.frames)}",
        f"mean iterations: {run.mean_iterations:.3f}",
        f"fallback frames: {run.fallback_count}",
        f"time per frame (ms): mean {times.mean_ms:.3f}  median {times.median_ms:.3f}  p95 {times.p95_ms:.3f}",
        "timing covers matching and estimation only; target key sorting / k-d tree builds and file I/O are excluded",
        "",
        "resolved config:",
        *(f"  {l}" for l in cfg.resolved_lines()),
        "",
        "frame  timestamp  elapsed_ms  iterations  correspondences  fallback  degraded",
    ]
    csv = ["frame,timestamp,elapsed_ms,iterations,correspondences,fallback,degraded"]
    for f in run.frames:
        lines.append(
            f"{f.index:5d}  {f.timestamp:9.6f}  {f.elapsed * 1e3:10.3f}  {f.iterations:10d}  "
            f"{f.correspondences:15d}  {int(f.fallback):8d}  {int(f.degraded):8d}"
            + (f"  {f.error}" if f.error else "")
        )
        csv.append(
            f"{f.index},{f.timestamp:.6f},{f.elapsed * 1e3:.6f},{f.iterations},"
            f"{f.correspondences},{int(f.fallback)},{int(f.degraded)}"
        )
    return "\n".join(lines) + "\n", "\n".join(csv) + "\n"


def odom(cfg: Config, dataset_dir, out_path) -> OdometryRun:
    data = read_dataset(dataset_dir)
    method = Method(cfg.method)
    run = run_odometry(data.scans, method, cfg.params_for(method), cfg.seeding)
    out_path = Path(out_path)
    write_trajectory(Trajectory(run.timestamps, tuple(run.poses)), out_path)
    text, csv = run_report(run, cfg)
    txt_path, csv_path = _report_paths(out_path)
    write_text(txt_path, text)
    write_text(csv_path, csv)
    return run


# eval -----------------------------------------------------------------------


def evaluate(est_path, gt_path, segments=DEFAULT_SEGMENTS) -> tuple[str, str]:
    est = read_trajectory(est_path)
    gt = read_trajectory(gt_path)
    ape = absolute_pose_error(est, gt)
    rel = relative_error(est, gt, segments)
    text = format_segment_table(rel, "relative error")
    text += (
        f"\nabsolute pose error (m): rmse {ape.rmse:.6f}  mean {ape.mean:.6f}  max {ape.max:.6f}"
        + ("" if ape.aligned else "  (fewer than 3 poses: not aligned)")
        + "\n"
    )
    return text, segment_csv(rel)


def _ape_csv(est_path, gt_path) -> str:
    ape = absolute_pose_error(read_trajectory(est_path), read_trajectory(gt_path))
    return f"rmse_m,mean_m,max_m,aligned\n{ape.rmse:.9f},{ape.mean:.9f},{ape.max:.9f},{int(ape.aligned)}\n"


# bench ----------------------------------------------------------------------


def bench(cfg: Config, dataset_dir) -> tuple[str, str]:
    """Every method on the same dataset, one row each."""
    data = read_dataset(dataset_dir)
    rows = []
    for method in Method:
        run = run_odometry(data.scans, method, cfg.params_for(method), cfg.seeding)
        t = timing_report([f.elapsed for f in run.frames])
        row = {
            "method": method.value,
            "seeding": run.seeding.value,
            "mean_ms": f"{t.mean_ms:.3f}",
            "median_ms": f"{t.median_ms:.3f}",
            "p95_ms": f"{t.p95_ms:.3f}",
            "mean_iterations": f"{run.mean_iterations:.3f}",
            "fallbacks": str(run.fallback_count),
            "frame_trans_err_m": "nan",
            "ape_rmse_m": "nan",
        }
        gt = data.groundtruth
        if gt is not None and len(gt) == len(data.scans):
            errs = []
            for k, inc in enumerate(run.increments):
                # estimated vs true point-motion increment of pair k
                true_inc = compose(inverse(gt.poses[k + 1]), gt.poses[k])
                errs.append(np.linalg.norm(inc.translation - true_inc.translation))
            row["frame_trans_err_m"] = f"{np.mean(errs):.6f}"
            est = Trajectory(run.timestamps, tuple(run.poses))
            row["ape_rmse_m"] = f"{absolute_pose_error(est, gt).rmse:.6f}"
        rows.append(row)
    head = list(rows[0])
    widths = [max(len(h), *(len(r[h]) for r in rows)) for h in head]
    text = "\n".join(
        ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
        + ["  ".join(r[h].rjust(w) for h, w in zip(head, widths)) for r in rows]
    )
    csv = "\n".join([",".join(head)] + [",".join(r[h] for h in head) for r in rows])
    return text + "\n", csv + "\n"


# entry point ----------------------------------------------------------------


def _segments(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad segment list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doppler-match", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument(
            "--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)"
        )
        return sp

    s = with_config(sub.add_parser("synth", help="write a synthetic dataset"))
    s.add_argument("--out", type=Path, required=True, help="dataset directory")

    o = with_config(sub.add_parser("odom", help="run odometry over a dataset"))
    o.add_argument("--dataset", type=Path, required=True)
    o.add_argument("--out", type=Path, required=True, help="TUM trajectory to write")

    e = sub.add_parser("eval", help="relative and absolute trajectory errors")
    e.add_argument("--est", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--segments", type=_segments, default=list(DEFAULT_SEGMENTS))
    e.add_argument("--out-prefix", type=Path, help="write <prefix>_segments.csv and <prefix>_ape.csv")

    b = with_config(sub.add_parser("bench", help="time every method on one dataset"))
    b.add_argument("--dataset", type=Path, required=True)
    b.add_argument("--out-prefix", type=Path, help="write <prefix>_bench.csv")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            root = synth(_config(args), args.out)
            print(f"wrote {root}")
        elif args.command == "odom":
            cfg = _config(args, required=("method",))
            run = odom(cfg, args.dataset, args.out)
            txt, _ = _report_paths(args.out)
            print(
                f"wrote {args.out} ({len(run.poses)} poses, {run.fallback_count} fallback frames); "
                f"report {txt}"
            )
        elif args.command == "eval":
            for path in (args.est, args.gt):
                if not path.exists():
                    raise DopplerMatchError(f"no such file: {path}")
            text, csv = evaluate(args.est, args.gt, args.segments)
            sys.stdout.write(text)
            if args.out_prefix is not None:
                write_text(f"{args.out_prefix}_segments.csv", csv)
                write_text(f"{args.out_prefix}_ape.csv", _ape_csv(args.est, args.gt))
        elif args.command == "bench":
            text, csv = bench(_config(args), args.dataset)
            sys.stdout.write(text)
            if args.out_prefix is not None:
                write_text(f"{args.out_prefix}_bench.csv", csv)
    except (DopplerMatchError, ValueError) as exc:
        print(f"doppler-match {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
