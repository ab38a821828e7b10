"""Rigid registration: closed-form alignment, Doppler single-step matcher,
point-to-point ICP, Doppler 4D-ICP and an odometry driver chaining them.

Every estimator returns the transform mapping source points onto target
points (``q ~ R p + t``). For consecutive scans this is the point-motion
increment; the sensor moves by its inverse.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import RigidTransform, Scan, align_points, apply, compose, inverse
from .correspondence import (
    CorrespondenceSet,
    DopplerKeyIndex,
    MatchParams,
    NearestPointIndex,
    _distances,
    _key,
    _match_keys,
    _strided,
    reject_outliers,
)
from .errors import (
    DegenerateConfiguration,
    EmptyScan,
    InsufficientCorrespondences,
    RegistrationError,
)

log = logging.getLogger(__name__)

__all__ = [
    "IcpParams",
    "Doppler4DIcpParams",
    "RegistrationResult",
    "Method",
    "Seeding",
    "FrameReport",
    "OdometryRun",
    "estimate_rigid",
    "huber_weight",
    "match_scan_noniterative",
    "icp_point_to_point",
    "doppler_4d_icp",
    "run_odometry",
]

# rank(H) < 2 when the second singular value is this small relative to the first
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_threshold: float = 1e-5
    match: MatchParams = field(default_factory=MatchParams)
    use_seed: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be > 0")


@dataclass(frozen=True)
class Doppler4DIcpParams:
    icp: IcpParams = field(default_factory=IcpParams)
    alpha: float = 0.9
    huber_delta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be > 0")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    iterations: int
    final_correspondence_count: int
    final_mean_residual: float
    elapsed: float
    estimate_calls: int = 1
    residual_history: list[float] = field(default_factory=list)
    correspondences: CorrespondenceSet | None = None
    degraded: bool = False


class Method(str, Enum):
    NONITERATIVE = "noniterative"
    ICP = "icp"
    DOPPLER4D = "doppler4d"


class Seeding(str, Enum):
    NONE = "none"
    CONSTANT_VELOCITY = "constant_velocity"


def estimate_rigid(
    source: ArrayLike, target: ArrayLike, weights: ArrayLike | None = None
) -> RigidTransform:
    """Weighted least-squares rigid transform mapping ``source`` onto ``target``.

    Pairs with zero weight are ignored. Raises InsufficientCorrespondences
    for fewer than three weighted pairs and DegenerateConfiguration when the
    cross-covariance has rank < 2 (e.g. collinear points).
    """
    P = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if P.shape != Q.shape:
        raise ValueError("source and target must have the same shape")
    if weights is None:
        w = np.ones(P.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != P.shape[0]:
            raise ValueError("one weight per pair required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and >= 0")
        keep = w > 0
        if not np.all(keep):
            P, Q, w = P[keep], Q[keep], w[keep]
    if P.shape[0] < 3:
        raise InsufficientCorrespondences(f"{P.shape[0]} pairs, need at least 3")
    R, t, S = align_points(P, Q, w)
    if not S[0] > 0 or S[1] <= _RANK_TOL * S[0]:
        raise DegenerateConfiguration(f"cross-covariance singular values {S}")
    return RigidTransform(R, t)


def huber_weight(residual, delta: float):
    """IRLS weight of the Huber loss: 1 inside ``delta``, ``delta/|r|`` outside."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    r = np.abs(np.asarray(residual, dtype=np.float64))
    w = np.where(r <= delta, 1.0, delta / np.maximum(r, delta))
    return float(w) if w.ndim == 0 else w


def _prepare(source: Scan, target: Scan, stride: int):
    s_idx = _strided(len(source), stride)
    t_idx = _strided(len(target), stride)
    if s_idx.size == 0 or t_idx.size == 0:
        raise EmptyScan("source and target must be non-empty after downsampling")
    return s_idx, t_idx


def _doppler_pairs(
    source: Scan,
    s_idx: NDArray[np.intp],
    target: Scan,
    index: DopplerKeyIndex,
    params: MatchParams,
    seed: RigidTransform | None,
) -> CorrespondenceSet:
    """Doppler matches masked by both thresholds.

    Keys always come from the raw source; a seed only moves the source
    before the spatial distance test.
    """
    c = _match_keys(source, s_idx, target, index, params.delta_t)
    if seed is not None:
        moved = apply(seed, source.positions[c.source_indices])
        c = c.with_spatial_residuals(_distances(moved, target.positions[c.target_indices]))
    return reject_outliers(c, params)


def match_scan_noniterative(
    source: Scan,
    target: Scan,
    params: MatchParams,
    seed: RigidTransform | None = None,
) -> RegistrationResult:
    """Single-step registration from Doppler correspondences.

    Keys -> nearest key -> dual-threshold mask -> one closed-form solve.
    ``seed`` (off by default) only shifts the source for the spatial mask.
    """
    s_idx, t_idx = _prepare(source, target, params.downsample_stride)
    g = _key(target.positions[t_idx], target.doppler[t_idx], params.delta_t, -1.0)
    index = DopplerKeyIndex(g, t_idx)

    t0 = time.perf_counter()
    c = _doppler_pairs(source, s_idx, target, index, params, seed)
    P = source.positions[c.source_indices]
    Q = target.positions[c.target_indices]
    T = estimate_rigid(P, Q)
    elapsed = time.perf_counter() - t0

    residual = float(np.mean(_distances(apply(T, P), Q)))
    return RegistrationResult(
        transform=T,
        iterations=1,
        final_correspondence_count=len(c),
        final_mean_residual=residual,
        elapsed=elapsed,
        estimate_calls=1,
        residual_history=[float(np.mean(c.spatial_residuals))],
        correspondences=c,
    )


def _iterate(
    source: Scan,
    s_idx: NDArray[np.intp],
    target: Scan,
    tree: NearestPointIndex,
    icp: IcpParams,
    initial: RigidTransform,
    *,
    alpha: float = 0.0,
    huber_delta: float | None = None,
    doppler: CorrespondenceSet | None = None,
):
    """Shared ICP loop. Returns (transform, iterations, calls, history, last set, count, residual)."""
    P0 = source.positions[s_idx]
    current = apply(initial, P0)
    T = initial
    if doppler is not None and len(doppler) > 0 and alpha > 0:
        # positions of Doppler-paired source points inside ``current``
        d_rows = np.searchsorted(s_idx, doppler.source_indices)
        d_target = target.positions[doppler.target_indices]
        use_doppler = True
    else:
        use_doppler = False
        alpha = 0.0
    history: list[float] = []
    calls = 0
    last_set = None
    count = 0
    post = float("nan")
    for it in range(1, icp.max_iterations + 1):
        j, dist = tree.query(current)
        keep = dist <= icp.match.tau_spatial
        last_set = CorrespondenceSet(
            s_idx[keep], j[keep], dist[keep], np.full(int(keep.sum()), np.nan)
        )
        src = current[keep]
        dst = target.positions[j[keep]]
        res = dist[keep]
        if use_doppler:
            src_d = current[d_rows]
            res_d = _distances(src_d, d_target)
            src = np.concatenate([src, src_d])
            dst = np.concatenate([dst, d_target])
            res_all = np.concatenate([res, res_d])
            w_s = (1.0 - alpha) * _weights(res, huber_delta)
            w_d = alpha * _weights(res_d, huber_delta)
            w = np.concatenate([w_s, w_d])
            mask = w > 0
            pre = float(np.mean(res_all[mask])) if mask.any() else float("nan")
        else:
            w = None if huber_delta is None else huber_weight(res, huber_delta)
            pre = float(np.mean(res)) if res.size else float("nan")
            mask = None
        calls += 1
        dT = estimate_rigid(src, dst, w)
        current = apply(dT, current)
        T = compose(dT, T)
        moved = apply(dT, src if mask is None else src[mask])
        post = float(np.mean(_distances(moved, dst if mask is None else dst[mask])))
        count = int(src.shape[0] if mask is None else mask.sum())
        history.append(pre)
        if abs(pre - post) < icp.convergence_threshold:
            break
    return T, it, calls, history, last_set, count, post


def _weights(res: NDArray[np.float64], delta: float | None) -> NDArray[np.float64]:
    if delta is None:
        return np.ones(res.shape[0])
    return huber_weight(res, delta)


def icp_point_to_point(
    source: Scan,
    target: Scan,
    params: IcpParams,
    seed: RigidTransform | None = None,
    *,
    huber_delta: float | None = None,
) -> RegistrationResult:
    """Classic point-to-point ICP with a spatial distance gate.

    Stops when the mean pair residual changes by less than the convergence
    threshold across one update, or after ``max_iterations`` (not an error).
    ``huber_delta`` switches on Huber IRLS weights (one reweighting per
    iteration).
    """
    s_idx, t_idx = _prepare(source, target, params.match.downsample_stride)
    tree = NearestPointIndex(target.positions[t_idx], t_idx)
    initial = seed if (params.use_seed and seed is not None) else RigidTransform()

    t0 = time.perf_counter()
    T, it, calls, history, last_set, count, post = _iterate(
        source, s_idx, target, tree, params, initial, huber_delta=huber_delta
    )
    elapsed = time.perf_counter() - t0
    return RegistrationResult(
        transform=T,
        iterations=it,
        final_correspondence_count=count,
        final_mean_residual=post,
        elapsed=elapsed,
        estimate_calls=calls,
        residual_history=history,
        correspondences=last_set,
    )


def doppler_4d_icp(
    source: Scan,
    target: Scan,
    params: Doppler4DIcpParams,
    seed: RigidTransform | None = None,
) -> RegistrationResult:
    """ICP whose objective mixes fixed Doppler pairs with re-matched closest points.

    Minimises ``(1-alpha) sum_spatial huber(r) + alpha sum_doppler huber(r)``
    by one Huber-reweighted closed-form solve per iteration. The Doppler set
    is computed once on the raw source; its residuals follow the moving
    source. An empty Doppler set degrades to alpha = 0 and sets ``degraded``.
    """
    icp = params.icp
    mp = icp.match
    s_idx, t_idx = _prepare(source, target, mp.downsample_stride)
    g = _key(target.positions[t_idx], target.doppler[t_idx], mp.delta_t, -1.0)
    key_index = DopplerKeyIndex(g, t_idx)
    tree = NearestPointIndex(target.positions[t_idx], t_idx)
    use_seed = icp.use_seed and seed is not None
    initial = seed if use_seed else RigidTransform()

    t0 = time.perf_counter()
    doppler = None
    degraded = False
    if params.alpha > 0:
        doppler = _doppler_pairs(source, s_idx, target, key_index, mp, initial if use_seed else None)
        degraded = len(doppler) == 0
    T, it, calls, history, last_set, count, post = _iterate(
        source,
        s_idx,
        target,
        tree,
        icp,
        initial,
        alpha=params.alpha,
        huber_delta=params.huber_delta,
        doppler=doppler,
    )
    elapsed = time.perf_counter() - t0
    return RegistrationResult(
        transform=T,
        iterations=it,
        final_correspondence_count=count,
        final_mean_residual=post,
        elapsed=elapsed,
        estimate_calls=calls,
        residual_history=history,
        correspondences=last_set,
        degraded=degraded,
    )


@dataclass
class FrameReport:
    index: int
    timestamp: float
    elapsed: float
    iterations: int
    correspondences: int
    fallback: bool = False
    degraded: bool = False
    error: str = ""


@dataclass
class OdometryRun:
    timestamps: NDArray[np.float64]
    poses: list[RigidTransform]
    increments: list[RigidTransform]
    frames: list[FrameReport]
    method: Method
    seeding: Seeding

    @property
    def fallback_count(self) -> int:
        return sum(f.fallback for f in self.frames)

    @property
    def mean_iterations(self) -> float:
        return float(np.mean([f.iterations for f in self.frames])) if self.frames else 0.0


def _with_delta_t(params, delta_t: float):
    if isinstance(params, MatchParams):
        return replace(params, delta_t=delta_t)
    if isinstance(params, IcpParams):
        return replace(params, match=replace(params.match, delta_t=delta_t))
    return replace(params, icp=_with_delta_t(params.icp, delta_t))


def _with_use_seed(params, use_seed: bool):
    if isinstance(params, IcpParams):
        return replace(params, use_seed=use_seed)
    if isinstance(params, Doppler4DIcpParams):
        return replace(params, icp=replace(params.icp, use_seed=use_seed))
    return params


def register_pair(
    source: Scan, target: Scan, method: Method | str, params, seed: RigidTransform | None = None
) -> RegistrationResult:
    method = Method(method)
    if method is Method.NONITERATIVE:
        if not isinstance(params, MatchParams):
            raise TypeError("noniterative method needs MatchParams")
        return match_scan_noniterative(source, target, params, seed)
    if method is Method.ICP:
        if not isinstance(params, IcpParams):
            raise TypeError("icp method needs IcpParams")
        return icp_point_to_point(source, target, params, seed)
    if not isinstance(params, Doppler4DIcpParams):
        raise TypeError("doppler4d method needs Doppler4DIcpParams")
    return doppler_4d_icp(source, target, params, seed)


def run_odometry(
    scans: Sequence[Scan],
    method: Method | str,
    params,
    seeding: Seeding | str = Seeding.NONE,
) -> OdometryRun:
    """Register consecutive scans and chain sensor poses from identity.

    ``params`` must match ``method`` (MatchParams, IcpParams or
    Doppler4DIcpParams). The key interval ``delta_t`` of each pair is the
    difference of the scan timestamps. A frame whose registration fails
    falls back to the seed (or identity) and is flagged.
    """
    method = Method(method)
    seeding = Seeding(seeding)
    if len(scans) < 2:
        raise ValueError("need at least two scans")
    stamps = np.array([s.timestamp for s in scans])
    if np.any(np.diff(stamps) <= 0):
        raise ValueError("scan timestamps must be strictly increasing")
    params = _with_use_seed(params, seeding is Seeding.CONSTANT_VELOCITY)

    pose = RigidTransform()
    poses = [pose]
    increments: list[RigidTransform] = []
    frames: list[FrameReport] = []
    prev: RigidTransform | None = None
    for k in range(1, len(scans)):
        p = _with_delta_t(params, float(stamps[k] - stamps[k - 1]))
        seed = prev if seeding is Seeding.CONSTANT_VELOCITY else None
        try:
            res = register_pair(scans[k - 1], scans[k], method, p, seed)
            inc = res.transform
            report = FrameReport(
                k, float(stamps[k]), res.elapsed, res.iterations,
                res.final_correspondence_count, degraded=res.degraded,
            )
        except RegistrationError as exc:
            log.warning("frame %d: %s; falling back", k, exc)
            inc = seed if seed is not None else RigidTransform()
            report = FrameReport(k, float(stamps[k]), 0.0, 0, 0, fallback=True, error=str(exc))
        increments.append(inc)
        frames.append(report)
        pose = compose(pose, inverse(inc))
        poses.append(pose)
        prev = inc
    return OdometryRun(stamps, poses, increments, frames, method, seeding)
