"""Synthetic FMCW scans with exact rigid motion and physical Doppler.

The world is static (apart from optional dynamic points) and is observed
from a moving sensor. Between frames, points expressed in the sensor frame
move by the increment ``p' = exp(dT w^) p + rho dT``; the sensor pose moves
by its inverse. Each point's Doppler is the radial component of its
apparent velocity, ``v = (p/|p|) . rho`` for static points (the ``w x p``
part is orthogonal to the line of sight).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import RigidTransform, Scan, Twist, apply, compose, inverse
from .errors import ZeroRangePoint

__all__ = [
    "SceneKind",
    "SceneSpec",
    "Scene",
    "MotionProfile",
    "NoiseSpec",
    "ScanPair",
    "SimulatedTrajectory",
    "generate_scene",
    "doppler_of",
    "simulate_scan_pair",
    "simulate_trajectory",
]

_MIN_RANGE = 1e-9


class SceneKind(str, Enum):
    STRAIGHT_WALL = "straight_wall"
    CURVED_WALL = "curved_wall"
    TUNNEL = "tunnel"
    RANDOM_SCATTER = "random_scatter"


@dataclass(frozen=True)
class SceneSpec:
    kind: SceneKind | str = SceneKind.RANDOM_SCATTER
    extent: float = 100.0
    point_count: int = 1000
    rng_seed: int = 0
    wall_offset: float = 10.0
    wall_height: float = 3.0
    tunnel_radius: float = 5.0
    curve_radius: float = 50.0
    min_range: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SceneKind(self.kind))
        if self.point_count < 1:
            raise ValueError("point_count must be >= 1")
        if not self.extent > 0:
            raise ValueError("extent must be > 0")


@dataclass(frozen=True)
class MotionProfile:
    """Per-increment twists; ``frames`` scans are produced from ``frames - 1`` increments."""

    twists: tuple[Twist, ...]
    delta_t: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "twists", tuple(self.twists))
        if not self.delta_t > 0:
            raise ValueError("delta_t must be > 0")
        if len(self.twists) < 1:
            raise ValueError("need at least one twist (two frames)")

    @classmethod
    def constant(cls, twist: Twist, frames: int, delta_t: float = 0.1) -> MotionProfile:
        if frames < 2:
            raise ValueError("need at least two frames")
        return cls((twist,) * (frames - 1), delta_t)

    @property
    def frames(self) -> int:
        return len(self.twists) + 1


@dataclass(frozen=True)
class NoiseSpec:
    position_sigma: float = 0.0
    doppler_sigma: float = 0.0
    dropout_rate: float = 0.0
    dynamic_point_fraction: float = 0.0
    dynamic_speed: float = 5.0
    dynamic_objects: int = 3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.position_sigma < 0 or self.doppler_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.dynamic_point_fraction < 1.0:
            raise ValueError("dynamic_point_fraction must lie in [0, 1)")
        if self.dynamic_objects < 1:
            raise ValueError("dynamic_objects must be >= 1")


@dataclass(frozen=True, eq=False)
class Scene:
    """World points at time zero plus per-point world velocity (zero if static)."""

    points: NDArray[np.float64]
    velocities: NDArray[np.float64]

    @property
    def dynamic_mask(self) -> NDArray[np.bool_]:
        return np.any(self.velocities != 0.0, axis=1)

    def at(self, t: float) -> NDArray[np.float64]:
        return self.points + self.velocities * t


def generate_scene(spec: SceneSpec) -> NDArray[np.float64]:
    """Static world points; deterministic in ``spec.rng_seed``."""
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.point_count
    half = spec.extent / 2.0
    kind = SceneKind(spec.kind)
    if kind is SceneKind.STRAIGHT_WALL:
        x = rng.uniform(-half, half, n)
        side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        z = rng.uniform(-spec.wall_height, spec.wall_height, n)
        return np.column_stack([x, side * spec.wall_offset, z])
    if kind is SceneKind.CURVED_WALL:
        # arcs centred at (0, Rc); the sensor starts on the middle circle heading +x
        rc = spec.curve_radius
        phi = rng.uniform(-half / rc, half / rc, n)
        side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        r = rc - side * spec.wall_offset
        z = rng.uniform(-spec.wall_height, spec.wall_height, n)
        return np.column_stack([r * np.sin(phi), rc - r * np.cos(phi), z])
    if kind is SceneKind.TUNNEL:
        x = rng.uniform(-half, half, n)
        theta = rng.uniform(0.0, np.pi, n)
        return np.column_stack(
            [x, spec.tunnel_radius * np.cos(theta), spec.tunnel_radius * np.sin(theta)]
        )
    pts = rng.uniform(-half, half, (n, 3))
    close = np.linalg.norm(pts, axis=1) < spec.min_range
    while np.any(close):
        pts[close] = rng.uniform(-half, half, (int(close.sum()), 3))
        close = np.linalg.norm(pts, axis=1) < spec.min_range
    return pts


def doppler_of(point_in_sensor_frame: ArrayLike, twist: Twist) -> float:
    p = np.asarray(point_in_sensor_frame, dtype=np.float64)
    return float(_radial(p.reshape(1, 3), np.asarray(twist.rho).reshape(1, 3))[0])


def _radial(p: NDArray[np.float64], vel: NDArray[np.float64]) -> NDArray[np.float64]:
    r = np.sqrt(np.sum(p * p, axis=1))
    if np.any(r < _MIN_RANGE):
        raise ZeroRangePoint("point at the sensor origin has no line of sight")
    return np.sum(p * vel, axis=1) / r


def _as_scene(scene, noise: NoiseSpec) -> Scene:
    if isinstance(scene, Scene):
        return scene
    pts = np.asarray(scene, dtype=np.float64).reshape(-1, 3)
    vel = np.zeros_like(pts)
    n_dyn = int(round(noise.dynamic_point_fraction * pts.shape[0]))
    if n_dyn > 0:
        rng = np.random.default_rng([noise.rng_seed, 0xD1A])
        chosen = np.sort(rng.choice(pts.shape[0], size=n_dyn, replace=False))
        heading = rng.uniform(0.0, 2.0 * np.pi, noise.dynamic_objects)
        obj_vel = noise.dynamic_speed * np.column_stack(
            [np.cos(heading), np.sin(heading), np.zeros_like(heading)]
        )
        vel[chosen] = obj_vel[rng.integers(0, noise.dynamic_objects, n_dyn)]
    return Scene(pts, vel)


@dataclass
class _Frame:
    scan: Scan
    ids: NDArray[np.intp]


def _render(
    scene: Scene,
    sensor_pose: RigidTransform,
    twist: Twist,
    t: float,
    noise: NoiseSpec,
    frame_index: int,
    shuffle: bool,
) -> _Frame:
    rng = np.random.default_rng([noise.rng_seed, frame_index])
    world = scene.at(t)
    to_sensor = inverse(sensor_pose)
    p = apply(to_sensor, world)
    # apparent velocity in the sensor frame: ego flow plus object motion
    vel = twist.rho + scene.velocities @ sensor_pose.rotation
    dop = _radial(p, vel)
    ids = np.arange(p.shape[0], dtype=np.intp)
    if noise.position_sigma > 0:
        p = p + rng.normal(0.0, noise.position_sigma, p.shape)
    if noise.doppler_sigma > 0:
        dop = dop + rng.normal(0.0, noise.doppler_sigma, dop.shape)
    if noise.dropout_rate > 0:
        keep = rng.random(p.shape[0]) >= noise.dropout_rate
        p, dop, ids = p[keep], dop[keep], ids[keep]
    if shuffle:
        perm = rng.permutation(p.shape[0])
        p, dop, ids = p[perm], dop[perm], ids[perm]
    return _Frame(Scan(p, dop, t), ids)


def _true_target(src_ids: NDArray[np.intp], tgt_ids: NDArray[np.intp]) -> NDArray[np.intp]:
    """For each source point, the index of the same world point in the target (-1 if absent)."""
    lookup = np.full(max(src_ids.max(initial=-1), tgt_ids.max(initial=-1)) + 1, -1, dtype=np.intp)
    lookup[tgt_ids] = np.arange(tgt_ids.size, dtype=np.intp)
    return lookup[src_ids]


@dataclass(frozen=True, eq=False)
class ScanPair:
    """Two consecutive scans and the exact point-motion increment.

    Unpacks as ``source, target, increment``. ``true_target`` is the hidden
    ground-truth pairing, for test oracles only.
    """

    source: Scan
    target: Scan
    increment: RigidTransform
    source_ids: NDArray[np.intp]
    target_ids: NDArray[np.intp]
    dynamic: NDArray[np.bool_]

    def __iter__(self) -> Iterator:
        return iter((self.source, self.target, self.increment))

    @property
    def true_target(self) -> NDArray[np.intp]:
        return _true_target(self.source_ids, self.target_ids)

    @property
    def source_dynamic(self) -> NDArray[np.bool_]:
        return self.dynamic[self.source_ids]


def simulate_scan_pair(
    scene,
    sensor_pose: RigidTransform,
    twist: Twist,
    delta_t: float,
    noise: NoiseSpec | None = None,
    t0: float = 0.0,
) -> ScanPair:
    """Render the scene at ``sensor_pose`` and after one exact increment.

    The second scan is shuffled; both scans carry Doppler from the same
    twist. ``scene`` is an (N, 3) array of world points or a :class:`Scene`.
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be > 0")
    noise = noise or NoiseSpec()
    sc = _as_scene(scene, noise)
    inc = twist.increment(delta_t)
    next_pose = compose(sensor_pose, inverse(inc))
    a = _render(sc, sensor_pose, twist, t0, noise, 0, shuffle=False)
    b = _render(sc, next_pose, twist, t0 + delta_t, noise, 1, shuffle=True)
    return ScanPair(a.scan, b.scan, inc, a.ids, b.ids, sc.dynamic_mask)


@dataclass(frozen=True, eq=False)
class SimulatedTrajectory:
    """Scans plus ground-truth sensor poses; unpacks as ``scans, poses``."""

    scans: list[Scan]
    poses: list[RigidTransform]
    increments: list[RigidTransform]
    point_ids: list[NDArray[np.intp]]
    dynamic: NDArray[np.bool_]

    def __iter__(self) -> Iterator:
        return iter((self.scans, self.poses))

    @property
    def timestamps(self) -> NDArray[np.float64]:
        return np.array([s.timestamp for s in self.scans])

    def pair(self, k: int) -> ScanPair:
        """Scans ``k`` and ``k + 1`` with their ground truth."""
        return ScanPair(
            self.scans[k],
            self.scans[k + 1],
            self.increments[k],
            self.point_ids[k],
            self.point_ids[k + 1],
            self.dynamic,
        )


def simulate_trajectory(
    scene,
    profile: MotionProfile,
    noise: NoiseSpec | None = None,
    *,
    initial_pose: RigidTransform | None = None,
    t0: float = 0.0,
) -> SimulatedTrajectory:
    """Chain exact increments; scan ``k`` uses the twist of increment ``k``.

    The final scan reuses the last twist. Frame ``k`` draws its noise from
    the stream ``(noise.rng_seed, k)``, so a two-frame trajectory equals
    :func:`simulate_scan_pair`.
    """
    noise = noise or NoiseSpec()
    sc = _as_scene(scene, noise)
    dt = profile.delta_t
    pose = initial_pose or RigidTransform()
    scans, poses, ids, incs = [], [], [], []
    for k in range(profile.frames):
        twist = profile.twists[min(k, len(profile.twists) - 1)]
        fr = _render(sc, pose, twist, t0 + k * dt, noise, k, shuffle=k > 0)
        scans.append(fr.scan)
        ids.append(fr.ids)
        poses.append(pose)
        if k < len(profile.twists):
            inc = twist.increment(dt)
            incs.append(inc)
            pose = compose(pose, inverse(inc))
    return SimulatedTrajectory(scans, poses, incs, ids, sc.dynamic_mask)

