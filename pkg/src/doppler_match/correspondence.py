"""Doppler keys, 1D key matching, 3D closest-point matching and outlier masks.

Two consecutive scans ``P`` (source, earlier) and ``Q`` (target, later) are
related point-by-point through

    f(p) = r_p^2 + r_p v_p dT   and   g(q) = r_q^2 - r_q v_q dT,

which coincide for true pairs. Neither side depends on the sensor
translation, so matching on ``f``/``g`` is a 1D nearest-neighbour problem.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .core import Point4D, Scan
from .errors import EmptyScan

__all__ = [
    "MatchParams",
    "CorrespondenceSet",
    "source_key",
    "target_key",
    "source_keys",
    "target_keys",
    "downsample",
    "DopplerKeyIndex",
    "NearestPointIndex",
    "match_doppler",
    "match_closest_point",
    "reject_outliers",
]


@dataclass(frozen=True)
class MatchParams:
    delta_t: float = 0.1
    tau_spatial: float = 3.0
    tau_doppler: float = 5.0
    downsample_stride: int = 1

    def __post_init__(self) -> None:
        if not self.delta_t > 0:
            raise ValueError("delta_t must be > 0")
        if not self.tau_spatial > 0:
            raise ValueError("tau_spatial must be > 0")
        if not self.tau_doppler > 0:
            raise ValueError("tau_doppler must be > 0")
        if int(self.downsample_stride) != self.downsample_stride or self.downsample_stride < 1:
            raise ValueError("downsample_stride must be a positive integer")


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Index pairs into the *original* (non-downsampled) scans.

    ``doppler_residuals`` holds |f - g|; closest-point sets built inside the
    ICP loop leave it as NaN because keys of a moved source are meaningless.
    """

    source_indices: NDArray[np.intp]
    target_indices: NDArray[np.intp]
    spatial_residuals: NDArray[np.float64]
    doppler_residuals: NDArray[np.float64]

    def __post_init__(self) -> None:
        n = len(self.source_indices)
        for name in ("target_indices", "spatial_residuals", "doppler_residuals"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from source_indices")

    def __len__(self) -> int:
        return len(self.source_indices)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.source_indices.tolist(), self.target_indices.tolist()))

    def select(self, mask: NDArray[np.bool_]) -> CorrespondenceSet:
        return CorrespondenceSet(
            self.source_indices[mask],
            self.target_indices[mask],
            self.spatial_residuals[mask],
            self.doppler_residuals[mask],
        )

    def with_spatial_residuals(self, residuals: NDArray[np.float64]) -> CorrespondenceSet:
        return CorrespondenceSet(
            self.source_indices, self.target_indices, np.asarray(residuals), self.doppler_residuals
        )


def _key(positions, doppler, delta_t: float, sign: float):
    pos = np.asarray(positions, dtype=np.float64)
    r2 = np.sum(pos * pos, axis=-1)
    r = np.sqrt(r2)
    return r2 + sign * r * np.asarray(doppler, dtype=np.float64) * delta_t


def source_key(p: Point4D, delta_t: float) -> float:
    return float(_key(p.position, p.doppler, delta_t, 1.0))


def target_key(q: Point4D, delta_t: float) -> float:
    return float(_key(q.position, q.doppler, delta_t, -1.0))


def source_keys(scan: Scan, delta_t: float) -> NDArray[np.float64]:
    return _key(scan.positions, scan.doppler, delta_t, 1.0)


def target_keys(scan: Scan, delta_t: float) -> NDArray[np.float64]:
    return _key(scan.positions, scan.doppler, delta_t, -1.0)


def downsample(s: Scan, stride: int) -> Scan:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return s
    return Scan(s.positions[::stride], s.doppler[::stride], s.timestamp)


def _strided(n: int, stride: int) -> NDArray[np.intp]:
    return np.arange(0, n, stride, dtype=np.intp)


def _workers() -> int:
    try:
        n = int(os.environ.get("DOPPLER_MATCH_THREADS", "0"))
    except ValueError:
        n = 0
    return -1 if n <= 0 else n


def _distances(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    d = a - b
    return np.sqrt(np.sum(d * d, axis=-1))


class DopplerKeyIndex:
    """Sorted target keys for 1D nearest-key lookup.

    Ties (equal key distance, or duplicate keys) resolve to the smallest
    target index, which makes results identical to an exhaustive scan.
    """

    def __init__(self, keys: NDArray[np.float64], indices: NDArray[np.intp] | None = None):
        keys = np.asarray(keys, dtype=np.float64)
        if keys.size == 0:
            raise EmptyScan("target has no points")
        if indices is None:
            indices = np.arange(keys.size, dtype=np.intp)
        # np.unique's first-occurrence index is the smallest position among duplicates
        self.keys, first = np.unique(keys, return_index=True)
        self.indices = np.asarray(indices, dtype=np.intp)[first]

    def query(self, queries: NDArray[np.float64]) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
        """Return (target index, |query - key|) for every query key."""
        q = np.asarray(queries, dtype=np.float64)
        m = self.keys.size
        hi = np.searchsorted(self.keys, q, side="left")
        lo = hi - 1
        hi_c = np.minimum(hi, m - 1)
        lo_c = np.maximum(lo, 0)
        d_hi = np.abs(q - self.keys[hi_c])
        d_lo = np.abs(q - self.keys[lo_c])
        d_hi[hi >= m] = np.inf
        d_lo[lo < 0] = np.inf
        i_hi = self.indices[hi_c]
        i_lo = self.indices[lo_c]
        take_lo = (d_lo < d_hi) | ((d_lo == d_hi) & (i_lo < i_hi))
        return np.where(take_lo, i_lo, i_hi), np.where(take_lo, d_lo, d_hi)


class NearestPointIndex:
    """Exact Euclidean nearest neighbour with lowest-index tie breaking.

    A k-d tree proposes a few candidates; distances are recomputed with the
    same arithmetic as a brute-force scan so results match it bit for bit.
    Queries whose candidate list may be cut inside a tie fall back to a
    radius search.
    """

    _K = 4

    def __init__(self, points: NDArray[np.float64], indices: NDArray[np.intp] | None = None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape[0] == 0:
            raise EmptyScan("target has no points")
        self.points = pts
        self.indices = (
            np.arange(pts.shape[0], dtype=np.intp)
            if indices is None
            else np.asarray(indices, dtype=np.intp)
        )
        self.tree = cKDTree(pts)

    def query(self, queries: NDArray[np.float64]) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
        """Return (target index, distance) for every query point."""
        x = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(self._K, self.points.shape[0])
        d_tree, j = self.tree.query(x, k=k, workers=_workers())
        d_tree = d_tree.reshape(x.shape[0], k)
        j = j.reshape(x.shape[0], k)
        d = _distances(x[:, None, :], self.points[j])
        # lexicographic (distance, local index); local order equals original order
        best_d = d.min(axis=1)
        cand = np.where(d == best_d[:, None], j, np.iinfo(np.intp).max)
        best = cand.min(axis=1)
        out_d = best_d.copy()
        if k < self.points.shape[0]:
            slack = best_d * 1e-9 + 1e-12
            suspect = np.nonzero(d_tree[:, -1] <= best_d + slack)[0]
            for row in suspect:
                ball = self.tree.query_ball_point(x[row], best_d[row] + slack[row])
                ball = np.asarray(sorted(ball), dtype=np.intp)
                db = _distances(x[row][None, :], self.points[ball])
                m = np.argmin(db)
                best[row] = ball[m]
                out_d[row] = db[m]
        return self.indices[best], out_d


def match_doppler(source: Scan, target: Scan, params: MatchParams) -> CorrespondenceSet:
    """Pair every (downsampled) source point with the target of nearest key.

    No thresholding happens here; see :func:`reject_outliers`.
    """
    s_idx = _strided(len(source), params.downsample_stride)
    t_idx = _strided(len(target), params.downsample_stride)
    if s_idx.size == 0 or t_idx.size == 0:
        raise EmptyScan("source and target must be non-empty after downsampling")
    g = _key(target.positions[t_idx], target.doppler[t_idx], params.delta_t, -1.0)
    index = DopplerKeyIndex(g, t_idx)
    return _match_keys(source, s_idx, target, index, params.delta_t)


def _match_keys(
    source: Scan, s_idx: NDArray[np.intp], target: Scan, index: DopplerKeyIndex, delta_t: float
) -> CorrespondenceSet:
    f = _key(source.positions[s_idx], source.doppler[s_idx], delta_t, 1.0)
    j, dk = index.query(f)
    spatial = _distances(source.positions[s_idx], target.positions[j])
    return CorrespondenceSet(s_idx, j, spatial, dk)


def match_closest_point(source: Scan, target: Scan, params: MatchParams) -> CorrespondenceSet:
    """Pair every (downsampled) source point with its Euclidean nearest target."""
    s_idx = _strided(len(source), params.downsample_stride)
    t_idx = _strided(len(target), params.downsample_stride)
    if s_idx.size == 0 or t_idx.size == 0:
        raise EmptyScan("source and target must be non-empty after downsampling")
    index = NearestPointIndex(target.positions[t_idx], t_idx)
    j, d = index.query(source.positions[s_idx])
    f = _key(source.positions[s_idx], source.doppler[s_idx], params.delta_t, 1.0)
    g = _key(target.positions[j], target.doppler[j], params.delta_t, -1.0)
    return CorrespondenceSet(s_idx, j, d, np.abs(f - g))


def reject_outliers(
    c: CorrespondenceSet, params: MatchParams, *, spatial_only: bool = False
) -> CorrespondenceSet:
    """Keep pairs with spatial <= tau_spatial and |f - g| <= tau_doppler."""
    mask = c.spatial_residuals <= params.tau_spatial
    if not spatial_only:
        mask &= c.doppler_residuals <= params.tau_doppler
    return c.select(mask)
