"""On-disk formats: scan CSV, TUM trajectories, ``key = value`` configs, datasets.

Dataset layout::

    root/
      scans/000000.csv ...   header ``x,y,z,doppler``
      times.txt              one timestamp per scan
      groundtruth.txt        optional, TUM
      meta.txt               optional, free text
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .core import RigidTransform, Scan, Trajectory, orthonormalize
from .correspondence import MatchParams
from .errors import (
    ConfigTypeError,
    FieldCountError,
    FormatError,
    IoFailure,
    MalformedHeader,
    MissingRequired,
    QuaternionNormError,
    RowParseError,
    UnknownKey,
)
from .registration import Doppler4DIcpParams, IcpParams, Method, Seeding

log = logging.getLogger(__name__)

SCAN_HEADER = "x,y,z,doppler"


def format_float(x: float) -> str:
    """Shortest round-trip decimal; integral values lose the trailing ``.0``."""
    x = float(x)
    if x == 0.0:
        return "0"
    s = repr(x)
    return s[:-2] if s.endswith(".0") else s


def _read_lines(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read().split("\n")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc


def write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc.strerror or exc}") from exc


# scans ----------------------------------------------------------------------


def load_scan(path, timestamp: float = 0.0) -> tuple[Scan, int]:
    """Parse a scan CSV; returns the scan and the number of non-finite rows skipped."""
    lines = _read_lines(path)
    if not lines or lines[0].rstrip("\r") != SCAN_HEADER:
        got = lines[0] if lines else ""
        raise MalformedHeader(f"expected header {SCAN_HEADER!r}, got {got!r}", path, 1)
    rows = []
    skipped = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise RowParseError(f"expected 4 fields, got {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise RowParseError(f"cannot parse {line!r}", path, lineno) from None
        if not all(math.isfinite(v) for v in vals):
            skipped += 1
            continue
        rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return Scan(arr[:, :3], arr[:, 3], timestamp), skipped


def read_scan(path, timestamp: float = 0.0) -> Scan:
    scan, skipped = load_scan(path, timestamp)
    if skipped:
        log.warning("%s: skipped %d row(s) with non-finite values", path, skipped)
    return scan


def write_scan(scan: Scan, path) -> None:
    out = [SCAN_HEADER]
    for p, v in zip(scan.positions, scan.doppler):
        out.append(",".join(format_float(c) for c in (p[0], p[1], p[2], v)))
    write_text(path, "\n".join(out) + "\n")


# trajectories ---------------------------------------------------------------


def rotation_to_quaternion(R) -> np.ndarray:
    """(qx, qy, qz, qw) with qw >= 0."""
    q = Rotation.from_matrix(R).as_quat()
    if q[3] < 0 or (q[3] == 0 and q[np.nonzero(q)[0][0]] < 0):
        q = -q
    return q


def quaternion_to_rotation(q) -> np.ndarray:
    return orthonormalize(Rotation.from_quat(q).as_matrix())


def read_trajectory(path) -> Trajectory:
    stamps, poses = [], []
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FieldCountError(f"expected 8 fields, got {len(parts)}", path, lineno)
        try:
            vals = np.array([float(p) for p in parts])
        except ValueError:
            raise RowParseError(f"cannot parse {line!r}", path, lineno) from None
        if not np.all(np.isfinite(vals)):
            raise RowParseError("non-finite value", path, lineno)
        q = vals[4:]
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-3:
            raise QuaternionNormError(f"quaternion norm {norm:.6g} is not 1", path, lineno)
        stamps.append(vals[0])
        poses.append(RigidTransform(quaternion_to_rotation(q / norm), vals[1:4]))
    return Trajectory(np.array(stamps), tuple(poses))


def format_trajectory(traj: Trajectory) -> str:
    lines = []
    for t, pose in zip(traj.timestamps, traj.poses):
        q = rotation_to_quaternion(pose.rotation)
        vals = [*pose.translation, *q]
        lines.append(f"{t:.6f} " + " ".join(format_float(v) for v in vals))
    return "\n".join(lines) + "\n" if lines else ""


def write_trajectory(poses: Trajectory, path) -> None:
    write_text(path, format_trajectory(poses))


# config ---------------------------------------------------------------------


@dataclass
class Config:
    """Every tunable of the toolkit; file keys match field names.

    Registration keys follow the single-step Doppler setup by default. The
    scene/motion/noise keys only matter to ``synth``.
    """

    method: str | None = None
    seeding: str = "none"
    delta_t: float = 0.1
    tau_spatial: float = 3.0
    tau_doppler: float = 5.0
    downsample_stride: int = 1
    max_iterations: int = 100
    convergence_threshold: float = 1e-5
    alpha: float = 0.9
    huber_delta: float = 0.5
    # synth
    scene: str = "tunnel"
    extent: float = 100.0
    point_count: int = 5000
    scene_seed: int = 0
    frames: int = 50
    omega: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rho: tuple[float, float, float] = (-10.0, 0.0, 0.0)
    position_sigma: float = 0.0
    doppler_sigma: float = 0.0
    dropout_rate: float = 0.0
    dynamic_point_fraction: float = 0.0
    dynamic_speed: float = 5.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if self.method is not None:
            Method(self.method)
        Seeding(self.seeding)

    def match_params(self) -> MatchParams:
        return MatchParams(self.delta_t, self.tau_spatial, self.tau_doppler, self.downsample_stride)

    def icp_params(self) -> IcpParams:
        return IcpParams(
            self.max_iterations,
            self.convergence_threshold,
            self.match_params(),
            self.seeding == Seeding.CONSTANT_VELOCITY.value,
        )

    def doppler4d_params(self) -> Doppler4DIcpParams:
        return Doppler4DIcpParams(self.icp_params(), self.alpha, self.huber_delta)

    def params_for(self, method: Method | str):
        method = Method(method)
        if method is Method.NONITERATIVE:
            return self.match_params()
        if method is Method.ICP:
            return self.icp_params()
        return self.doppler4d_params()

    def resolved_lines(self) -> list[str]:
        out = []
        for k, v in asdict(self).items():
            if v is None:
                continue
            if isinstance(v, (tuple, list)):
                v = ",".join(format_float(x) for x in v)
            elif isinstance(v, float):
                v = format_float(v)
            out.append(f"{k} = {v}")
        return out


_FIELD_TYPES = {
    "method": "method",
    "seeding": "seeding",
    "delta_t": "pos_float",
    "tau_spatial": "pos_float",
    "tau_doppler": "pos_float",
    "downsample_stride": "pos_int",
    "max_iterations": "pos_int",
    "convergence_threshold": "pos_float",
    "alpha": "unit_float",
    "huber_delta": "pos_float",
    "scene": "scene",
    "extent": "pos_float",
    "point_count": "pos_int",
    "scene_seed": "int",
    "frames": "pos_int",
    "omega": "vec3",
    "rho": "vec3",
    "position_sigma": "nonneg_float",
    "doppler_sigma": "nonneg_float",
    "dropout_rate": "fraction",
    "dynamic_point_fraction": "fraction",
    "dynamic_speed": "nonneg_float",
    "noise_seed": "int",
}
assert set(_FIELD_TYPES) == {f.name for f in fields(Config)}

_EXPECT = {
    "pos_float": "a number > 0",
    "nonneg_float": "a number >= 0",
    "unit_float": "a number in [0, 1]",
    "fraction": "a number in [0, 1)",
    "pos_int": "an integer >= 1",
    "int": "an integer",
    "vec3": "three comma-separated numbers",
    "method": "one of noniterative, icp, doppler4d",
    "seeding": "one of none, constant_velocity",
    "scene": "one of straight_wall, curved_wall, tunnel, random_scatter",
}


def _parse_value(key: str, text: str, path=None, line=None):
    kind = _FIELD_TYPES[key]
    fail = ConfigTypeError(key, text, _EXPECT[kind], path, line)
    try:
        if kind in ("pos_float", "nonneg_float", "unit_float", "fraction"):
            v = float(text)
            if not math.isfinite(v):
                raise fail
            if kind == "pos_float" and not v > 0:
                raise fail
            if kind == "nonneg_float" and v < 0:
                raise fail
            if kind == "unit_float" and not 0 <= v <= 1:
                raise fail
            if kind == "fraction" and not 0 <= v < 1:
                raise fail
            return v
        if kind in ("pos_int", "int"):
            v = int(text)
            if kind == "pos_int" and v < 1:
                raise fail
            return v
        if kind == "vec3":
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 3 or not all(math.isfinite(p) for p in parts):
                raise fail
            return tuple(parts)
    except ValueError:
        raise fail from None
    allowed = {
        "method": [m.value for m in Method],
        "seeding": [s.value for s in Seeding],
        "scene": ["straight_wall", "curved_wall", "tunnel", "random_scatter"],
    }[kind]
    if text not in allowed:
        raise fail
    return text


def parse_assignments(
    items: Iterable[tuple[str, int | None]], path=None
) -> dict[str, object]:
    """Parse ``key = value`` strings (with optional line numbers) into typed values."""
    out: dict[str, object] = {}
    for text, lineno in items:
        line = text.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UnknownKey(f"unknown key {key!r}", path, lineno)
        out[key] = _parse_value(key, value, path, lineno)
    return out


def read_config(
    path=None,
    overrides: Sequence[str] = (),
    required: Sequence[str] = (),
) -> Config:
    """Defaults, then the file (if any), then ``key=value`` overrides."""
    values: dict[str, object] = {}
    if path is not None:
        lines = _read_lines(path)
        values.update(parse_assignments(((l, i) for i, l in enumerate(lines, 1)), path))
    values.update(parse_assignments((o, None) for o in overrides))
    cfg = Config(**values)
    missing = [k for k in required if getattr(cfg, k) is None]
    if missing:
        where = f"{path}: " if path is not None else ""
        raise MissingRequired(f"{where}missing required key(s): {', '.join(missing)}")
    return cfg


def write_config(cfg: Config, path) -> None:
    write_text(path, "\n".join(cfg.resolved_lines()) + "\n")


# datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    root: Path
    scans: list[Scan]
    groundtruth: Trajectory | None
    skipped_rows: int = 0

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.scans])


def scan_path(root, index: int) -> Path:
    return Path(root) / "scans" / f"{index:06d}.csv"


def write_dataset(
    root,
    scans: Sequence[Scan],
    groundtruth: Trajectory | None = None,
    meta_lines: Sequence[str] = (),
) -> Path:
    root = Path(root)
    try:
        (root / "scans").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{root}: {exc.strerror or exc}") from exc
    for k, s in enumerate(scans):
        write_scan(s, scan_path(root, k))
    write_text(root / "times.txt", "".join(f"{s.timestamp:.6f}\n" for s in scans))
    if groundtruth is not None:
        write_trajectory(groundtruth, root / "groundtruth.txt")
    if meta_lines:
        write_text(root / "meta.txt", "\n".join(meta_lines) + "\n")
    return root


def read_dataset(root) -> Dataset:
    root = Path(root)
    times_path = root / "times.txt"
    stamps = []
    for lineno, raw in enumerate(_read_lines(times_path), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            stamps.append(float(line))
        except ValueError:
            raise RowParseError(f"cannot parse timestamp {line!r}", times_path, lineno) from None
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise FormatError("timestamps must be strictly increasing", times_path)
    files = sorted((root / "scans").glob("*.csv"))
    expected = [scan_path(root, k) for k in range(len(files))]
    if [f.name for f in files] != [e.name for e in expected]:
        raise FormatError("scan files must be numbered contiguously from 000000", root / "scans")
    if len(files) != len(stamps):
        raise FormatError(
            f"{len(stamps)} timestamps for {len(files)} scans", times_path
        )
    scans = []
    skipped = 0
    for path, t in zip(expected, stamps):
        s, n = load_scan(path, t)
        if n:
            log.warning("%s: skipped %d row(s) with non-finite values", path, n)
        skipped += n
        scans.append(s)
    gt_path = root / "groundtruth.txt"
    gt = read_trajectory(gt_path) if gt_path.exists() else None
    return Dataset(root, scans, gt, skipped)
