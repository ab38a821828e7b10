"""Value types and SE(3) helpers.

Conventions used everywhere in the package:

* rotations are stored as 3x3 matrices, radians internally;
* a ``RigidTransform`` maps points, ``apply(T, p) = R p + t``;
* Doppler is positive when the range grows (point receding from the sensor).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "Point4D",
    "Scan",
    "RigidTransform",
    "Twist",
    "Trajectory",
    "skew",
    "orthonormalize",
    "so3_exp",
    "rotation_angle",
    "compose",
    "inverse",
    "apply",
    "align_points",
]


# loose on purpose: accumulated products drift; compose() re-projects
_ORTHO_TOL = 1e-6


def _vec3(x: ArrayLike, name: str) -> NDArray[np.float64]:
    v = np.array(x, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Point4D:
    position: NDArray[np.float64]
    doppler: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        d = float(self.doppler)
        if not np.isfinite(d):
            raise ValueError("doppler must be finite")
        object.__setattr__(self, "doppler", d)

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.position))


@dataclass(frozen=True, eq=False)
class Scan:
    """Timestamped 4D point cloud stored column-wise.

    ``positions`` is (N, 3), ``doppler`` is (N,). Point order is meaningful:
    correspondence indices refer to it.
    """

    positions: NDArray[np.float64]
    doppler: NDArray[np.float64]
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        dop = np.array(self.doppler, dtype=np.float64).reshape(-1)
        if pos.shape[0] != dop.shape[0]:
            raise ValueError(
                f"positions ({pos.shape[0]}) and doppler ({dop.shape[0]}) lengths differ"
            )
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(dop))):
            raise ValueError("scan contains non-finite values")
        pos.setflags(write=False)
        dop.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "doppler", dop)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_points(cls, points: Sequence[Point4D], timestamp: float = 0.0) -> Scan:
        if len(points) == 0:
            return cls(np.empty((0, 3)), np.empty(0), timestamp)
        return cls(
            np.stack([p.position for p in points]),
            np.array([p.doppler for p in points]),
            timestamp,
        )

    @property
    def ranges(self) -> NDArray[np.float64]:
        return np.sqrt(np.sum(self.positions**2, axis=1))

    @property
    def points(self) -> list[Point4D]:
        return list(self)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Point4D:
        return Point4D(self.positions[i], self.doppler[i])

    def __iter__(self) -> Iterator[Point4D]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices: ArrayLike) -> Scan:
        idx = np.asarray(indices, dtype=np.intp)
        return Scan(self.positions[idx], self.doppler[idx], self.timestamp)

    def with_positions(self, positions: NDArray[np.float64]) -> Scan:
        return Scan(positions, self.doppler, self.timestamp)


def skew(v: ArrayLike) -> NDArray[np.float64]:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(R: ArrayLike) -> NDArray[np.float64]:
    """Nearest proper rotation in the Frobenius sense (SVD projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    if np.linalg.det(U @ Vt) < 0:
        U[:, -1] = -U[:, -1]
    return U @ Vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        R = np.array(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, M: ArrayLike) -> RigidTransform:
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> NDArray[np.float64]:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> RigidTransform:
        return inverse(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __call__(self, points: ArrayLike) -> NDArray[np.float64]:
        return apply(self, points)

    def __repr__(self) -> str:
        deg = np.degrees(rotation_angle(self.rotation))
        return f"RigidTransform(angle={deg:.4f}deg, t={np.array2string(self.translation, precision=4)})"


@dataclass(frozen=True)
class Twist:
    """Sensor angular velocity and apparent linear flow of static points.

    ``rho`` is expressed in the sensor frame and points along the motion of
    the scene relative to the sensor, so a sensor driving forward along +x
    sees ``rho = (-v, 0, 0)``.
    """

    omega: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    rho: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "omega", _vec3(self.omega, "omega"))
        object.__setattr__(self, "rho", _vec3(self.rho, "rho"))

    def increment(self, delta_t: float) -> RigidTransform:
        """Point-motion increment p -> exp(dt w^) p + rho dt."""
        return RigidTransform(so3_exp(self.omega * delta_t).rotation, self.rho * delta_t)


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: NDArray[np.float64]
    poses: tuple[RigidTransform, ...]

    def __post_init__(self) -> None:
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if ts.shape[0] != len(poses):
            raise ValueError("timestamps and poses must have the same length")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> NDArray[np.float64]:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def path_length(self) -> float:
        p = self.positions
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def so3_exp(axis_angle: ArrayLike) -> RigidTransform:
    """Rodrigues' formula; returns a pure rotation."""
    w = _vec3(axis_angle, "axis_angle")
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-8:
        # second-order Taylor terms; truncation error below float64 resolution
        R = np.eye(3) + K + 0.5 * (K @ K)
    else:
        R = (
            np.eye(3)
            + (np.sin(theta) / theta) * K
            + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
        )
    return RigidTransform(R, np.zeros(3))


def rotation_angle(R: ArrayLike) -> float:
    """Geodesic angle of a rotation matrix in radians.

    Uses atan2 of the skew and trace parts, which stays accurate near zero
    where arccos of the trace does not.
    """
    R = np.asarray(R, dtype=np.float64)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    R = orthonormalize(a.rotation @ b.rotation)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(R, t)


def inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def apply(T: RigidTransform, points: ArrayLike) -> NDArray[np.float64]:
    """R p + t for a single 3-vector or an (N, 3) array."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        return T.rotation @ p + T.translation
    return p @ T.rotation.T + T.translation


def align_points(
    source: ArrayLike, target: ArrayLike, weights: ArrayLike | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Weighted Kabsch solve without precondition checks.

    Returns ``(R, t, singular_values)`` minimising
    ``sum w_i |target_i - (R source_i + t)|^2``. Callers decide what to do
    with rank-deficient inputs; the returned rotation is always proper.
    """
    P = np.asarray(source, dtype=np.float64)
    Q = np.asarray(target, dtype=np.float64)
    if weights is None:
        w = np.ones(P.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    cp = (w @ P) / wsum
    cq = (w @ Q) / wsum
    H = (P - cp).T @ ((Q - cq) * w[:, None])
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = cq - R @ cp
    return R, t, S
