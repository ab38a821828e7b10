"""Odometry error metrics and timing statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RigidTransform, Trajectory, align_points, apply, compose, inverse, rotation_angle
from .errors import EmptyInput, LengthUnreachable, TimestampMismatch

__all__ = [
    "DEFAULT_SEGMENTS",
    "SegmentErrorReport",
    "ApeResult",
    "TimingStats",
    "relative_error",
    "absolute_pose_error",
    "timing_report",
    "format_segment_table",
    "segment_csv",
]

DEFAULT_SEGMENTS = (8.0, 16.0, 24.0, 32.0, 40.0, 48.0)
_TIME_TOL = 1e-6


@dataclass
class SegmentErrorReport:
    segment_lengths: list[float]
    rotation_deg: list[float]
    translation_m: list[float]
    sample_counts: list[int]
    unreachable: list[float] = field(default_factory=list)


@dataclass
class ApeResult:
    rmse: float
    mean: float
    max: float
    aligned: bool
    residuals: np.ndarray


@dataclass
class TimingStats:
    mean_ms: float
    median_ms: float
    p95_ms: float
    count: int


def _check_aligned(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise TimestampMismatch(f"{len(est)} estimated poses vs {len(gt)} ground-truth poses")
    if len(est) and np.max(np.abs(est.timestamps - gt.timestamps)) > _TIME_TOL:
        raise TimestampMismatch("estimated and ground-truth timestamps differ")


def relative_error(
    estimated: Trajectory,
    ground_truth: Trajectory,
    segment_lengths: Sequence[float] = DEFAULT_SEGMENTS,
    stride: int = 1,
) -> SegmentErrorReport:
    """Mean segment-wise relative rotation (deg) and translation (m) error.

    For start frame ``i`` the segment ends at the first frame ``j`` whose
    ground-truth arc length from ``i`` reaches ``L``. Segment lengths that no
    start frame can reach are dropped and listed in ``unreachable``.
    """
    _check_aligned(estimated, ground_truth)
    lengths = [float(L) for L in segment_lengths]
    if any(b <= a for a, b in zip(lengths, lengths[1:])) or any(L <= 0 for L in lengths):
        raise ValueError("segment lengths must be positive and strictly increasing")
    gt_pos = ground_truth.positions
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(gt_pos, axis=0), axis=1))])
    report = SegmentErrorReport([], [], [], [])
    n = len(ground_truth)
    for L in lengths:
        rot, trans = [], []
        for i in range(0, n, stride):
            j = int(np.searchsorted(arc, arc[i] + L, side="left"))
            if j >= n:
                continue
            gt_rel = compose(inverse(ground_truth.poses[i]), ground_truth.poses[j])
            est_rel = compose(inverse(estimated.poses[i]), estimated.poses[j])
            # raw products: equal relative motions give an exactly symmetric
            # R^T R and hence exactly zero error
            E_rot = gt_rel.rotation.T @ est_rel.rotation
            E_trans = gt_rel.rotation.T @ (est_rel.translation - gt_rel.translation)
            rot.append(math.degrees(rotation_angle(E_rot)))
            trans.append(float(np.linalg.norm(E_trans)))
        if not rot:
            report.unreachable.append(L)
            continue
        report.segment_lengths.append(L)
        # fsum is exactly rounded, so the mean does not depend on start-frame order
        report.rotation_deg.append(math.fsum(rot) / len(rot))
        report.translation_m.append(math.fsum(trans) / len(trans))
        report.sample_counts.append(len(rot))
    if not report.segment_lengths:
        raise LengthUnreachable(
            f"ground-truth path ({arc[-1]:.3f} m) is shorter than every segment length"
        )
    return report


def absolute_pose_error(estimated: Trajectory, ground_truth: Trajectory) -> ApeResult:
    """Position error after rigid (no scale) alignment of the estimate onto ground truth."""
    _check_aligned(estimated, ground_truth)
    if len(estimated) == 0:
        raise EmptyInput("empty trajectories")
    est = estimated.positions
    gt = ground_truth.positions
    aligned = len(estimated) >= 3
    if aligned:
        R, t, _ = align_points(est, gt)
        est = apply(RigidTransform(R, t), est)
    res = np.linalg.norm(gt - est, axis=1)
    return ApeResult(
        rmse=float(np.sqrt(np.mean(res**2))),
        mean=float(np.mean(res)),
        max=float(np.max(res)),
        aligned=aligned,
        residuals=res,
    )


def timing_report(per_frame_elapsed: Sequence[float]) -> TimingStats:
    """Mean, median and nearest-rank 95th percentile in milliseconds."""
    x = np.sort(np.asarray(per_frame_elapsed, dtype=np.float64)) * 1e3
    if x.size == 0:
        raise EmptyInput("no timing samples")
    rank = math.ceil(0.95 * x.size)
    return TimingStats(float(np.mean(x)), float(np.median(x)), float(x[rank - 1]), int(x.size))


def format_segment_table(report: SegmentErrorReport, title: str = "") -> str:
    head = ["segment_m", "rot_deg", "trans_m", "samples"]
    rows = [
        [f"{L:g}", f"{r:.6f}", f"{t:.6f}", str(n)]
        for L, r, t, n in zip(
            report.segment_lengths, report.rotation_deg, report.translation_m, report.sample_counts
        )
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    lines = [title] if title else []
    lines.append("  ".join(h.rjust(w) for h, w in zip(head, widths)))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    for L in report.unreachable:
        lines.append(f"segment {L:g} m: unreachable (path too short)")
    return "\n".join(lines) + "\n"


def segment_csv(report: SegmentErrorReport) -> str:
    lines = ["segment_m,rot_deg,trans_m"]
    for L, r, t in zip(report.segment_lengths, report.rotation_deg, report.translation_m):
        lines.append(f"{L:g},{r:.9f},{t:.9f}")
    return "\n".join(lines) + "\n"
