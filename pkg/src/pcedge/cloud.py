"""Point-cloud storage, exact kNN queries, and filtered-kNN surface patches.

The patch pipeline: fetch the 2k Euclidean nearest neighbors of a target
point, estimate the local minimal-variance axis by PCA, and keep the k
neighbors with the smallest absolute offset along that axis. This rejects
points that bleed through from the opposite side of a thin surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhood,
    DuplicatePoint,
    InsufficientNeighborhood,
    InvalidInput,
)

# Extra neighbors fetched per kd-tree query so that distance ties at the
# cut boundary can be re-broken by point index without a second query.
_TIE_PAD = 8


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set with optional per-point labels and predictions.

    points: (N, 3) float64 positions in world units.
    labels: optional (N,) array with 1 = edge, 0 = non-edge.
    predictions: optional (N,) array of edge probabilities in [0, 1].
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    predictions: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise InvalidInput(f"points must be a nonempty (N, 3) array, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidInput("points contain non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

        if self.labels is not None:
            lab = np.ascontiguousarray(self.labels, dtype=np.int64)
            if lab.shape != (pts.shape[0],):
                raise InvalidInput(f"labels must have shape ({pts.shape[0]},), got {lab.shape}")
            if not np.isin(lab, (0, 1)).all():
                raise InvalidInput("labels must be 0 or 1")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

        if self.predictions is not None:
            pred = np.ascontiguousarray(self.predictions, dtype=np.float64)
            if pred.shape != (pts.shape[0],):
                raise InvalidInput(f"predictions must have shape ({pts.shape[0]},), got {pred.shape}")
            if not np.isfinite(pred).all() or (pred < 0.0).any() or (pred > 1.0).any():
                raise InvalidInput("predictions must be finite and in [0, 1]")
            pred.flags.writeable = False
            object.__setattr__(self, "predictions", pred)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, labels, self.predictions)

    def with_predictions(self, predictions, labels=None) -> "PointCloud":
        return PointCloud(self.points, self.labels if labels is None else labels, predictions)


@dataclass(frozen=True)
class SurfacePatch:
    """A target point with its filtered-kNN neighborhood.

    dvecs are the centered neighbor vectors p_j - p_i ordered by
    nondecreasing norm (ties by neighbor index); proj_offsets are the
    absolute components of the dvecs along the minimal-variance axis;
    scale is the mean dvec norm.
    """

    center_index: int
    neighbor_indices: np.ndarray  # (k,) int
    dvecs: np.ndarray             # (k, 3) float64
    proj_offsets: np.ndarray      # (k,) float64
    normal_axis: np.ndarray       # (3,) unit float64
    scale: float

    @property
    def k(self) -> int:
        return self.dvecs.shape[0]


class SpatialIndex:
    """kd-tree over a cloud answering exact kNN queries.

    Results match a brute-force scan: sorted by nondecreasing Euclidean
    distance, ties broken by smaller point index. Immutable after build;
    safe for concurrent queries.
    """

    def __init__(self, cloud: PointCloud):
        self._points = cloud.points
        self._tree = cKDTree(cloud.points)

    @property
    def n(self) -> int:
        return self._points.shape[0]

    def query(self, q, k: int) -> np.ndarray:
        """Return the min(k, N) nearest point indices to q."""
        return self.query_many(np.asarray(q, dtype=np.float64).reshape(1, 3), k)[0]

    def query_many(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Vectorized query: (B, 3) query points -> (B, min(k, N)) indices."""
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != 3:
            raise InvalidInput(f"queries must be (B, 3), got shape {queries.shape}")
        n = self.n
        if k < 1:
            raise InvalidInput("k must be >= 1")
        kk = min(k, n)
        pad = min(kk + _TIE_PAD, n)
        _, idx = self._tree.query(queries, k=pad)
        idx = idx.reshape(queries.shape[0], pad).astype(np.int64)
        # Re-derive distances with plain numpy so ordering keys are exactly
        # the ones a brute-force scan would use, then sort (distance, index).
        diff = self._points[idx] - queries[:, None, :]
        dist = np.sqrt(np.einsum("bkd,bkd->bk", diff, diff))
        order = _argsort_rows(dist, idx)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        if pad < n:
            # A kd-tree breaks exact-distance ties arbitrarily. If the tie
            # group at the cut runs past the padded window, resolve that row
            # exhaustively within an inflated ball.
            risky = np.nonzero(dist[:, kk - 1] >= dist[:, pad - 1])[0]
            for b in risky:
                r = dist[b, kk - 1] * (1.0 + 1e-9) + 1e-300
                cand = np.asarray(self._tree.query_ball_point(queries[b], r), dtype=np.int64)
                d = np.linalg.norm(self._points[cand] - queries[b], axis=1)
                keep = cand[np.lexsort((cand, d))][:kk]
                idx[b, :kk] = keep
        return idx[:, :kk]


def _argsort_rows(*keys: np.ndarray) -> np.ndarray:
    """Per-row sort order for 2-d arrays, by the given keys in priority order."""
    b, m = keys[0].shape
    rows = np.repeat(np.arange(b), m)
    stacked = [key.ravel() for key in reversed(keys)] + [rows]
    order = np.lexsort(stacked).reshape(b, m)
    return order - np.arange(b)[:, None] * m


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Build an exact-kNN spatial index over the cloud."""
    if cloud.n < 1:
        raise InvalidInput("cannot index an empty cloud")
    return SpatialIndex(cloud)


def pca_min_axis(vectors: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the centered covariance with smallest eigenvalue.

    The sign is fixed so that the component with the largest absolute value
    is positive (first such component on ties).
    """
    pts = np.asarray(vectors, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise InvalidInput("pca_min_axis needs at least 3 three-dimensional points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    if np.trace(cov) == 0.0:
        raise DegenerateNeighborhood("all neighborhood points coincide")
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, 0]
    return _fix_sign(axis[None, :])[0]


def _fix_sign(axes: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude component is positive.

    Magnitude ties (within rounding) resolve to the first such component,
    keeping the canonical sign independent of eigensolver rounding.
    """
    mags = np.abs(axes)
    thresh = mags.max(axis=1, keepdims=True) * (1.0 - 1e-12)
    lead_idx = np.argmax(mags >= thresh, axis=1)
    lead = np.take_along_axis(axes, lead_idx[:, None], axis=1)[:, 0]
    return axes * np.where(lead < 0.0, -1.0, 1.0)[:, None]


def _min_axes(neighborhoods: np.ndarray) -> np.ndarray:
    """Batched minimal-variance axes: (B, m, 3) points -> (B, 3) unit axes."""
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("bmi,bmj->bij", centered, centered)
    traces = np.trace(cov, axis1=1, axis2=2)
    if (traces == 0.0).any():
        bad = int(np.nonzero(traces == 0.0)[0][0])
        raise DegenerateNeighborhood(f"neighborhood of target {bad} has coincident points")
    _, vecs = np.linalg.eigh(cov)
    return _fix_sign(vecs[:, :, 0])


def extract_patch(cloud: PointCloud, index: SpatialIndex, i: int, k: int) -> SurfacePatch:
    """Extract the filtered-kNN surface patch around point i."""
    dvecs, offsets, axes, scales, neighbor_idx = extract_patches(
        cloud, index, np.asarray([i], dtype=np.int64), k
    )
    return SurfacePatch(
        center_index=int(i),
        neighbor_indices=neighbor_idx[0],
        dvecs=dvecs[0],
        proj_offsets=offsets[0],
        normal_axis=axes[0],
        scale=float(scales[0]),
    )


def extract_patches(cloud: PointCloud, index: SpatialIndex, targets: np.ndarray, k: int):
    """Vectorized filtered-kNN patch extraction for many target points.

    Returns (dvecs (B,k,3), offsets (B,k), axes (B,3), scales (B,), neighbor
    indices (B,k)). Rows are ordered by nondecreasing dvec norm, ties by
    neighbor index. Safe to call concurrently against one shared index.
    """
    if k % 2 != 0 or not (4 <= k <= 64):
        raise InvalidInput(f"k must be even and in [4, 64], got {k}")
    targets = np.asarray(targets, dtype=np.int64)
    n = cloud.n
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise InvalidInput("target indices out of range")
    # Use all available neighbors when the cloud is smaller than 2k+1 but
    # still offers at least k candidates.
    n_cand = min(2 * k, n - 1)
    if n_cand < k:
        raise InsufficientNeighborhood(
            f"need at least {k + 1} points for k={k}, cloud has {n}"
        )
    centers = cloud.points[targets]
    nn = index.query_many(centers, n_cand + 1)
    # Drop the target itself from its candidate list; the remaining rows keep
    # their (distance, index) order. With exact duplicates the self index may
    # land anywhere in the zero-distance tie group, or fall off the list.
    is_self = nn == targets[:, None]
    if is_self.any(axis=1).all():
        keep_order = np.argsort(is_self, axis=1, kind="stable")[:, :n_cand]
        keep_order.sort(axis=1)
        cand = np.take_along_axis(nn, keep_order, axis=1)
    else:
        cand = np.empty((nn.shape[0], n_cand), dtype=np.int64)
        for b in range(nn.shape[0]):
            row = nn[b]
            row = row[row != targets[b]]
            cand[b] = row[:n_cand]

    dvecs_all = cloud.points[cand] - centers[:, None, :]
    cdist = np.sqrt(np.einsum("bkd,bkd->bk", dvecs_all, dvecs_all))
    if (cdist[:, 0] == 0.0).any():
        bad = int(targets[np.nonzero(cdist[:, 0] == 0.0)[0][0]])
        raise DuplicatePoint(f"cloud contains a duplicate of point {bad}")

    axes = _min_axes(cloud.points[cand])
    off_all = np.abs(np.einsum("bkd,bd->bk", dvecs_all, axes))

    # Keep the k smallest offsets; break ties by Euclidean distance, then index.
    sel = _argsort_rows(off_all, cdist, cand)[:, :k]
    kept_idx = np.take_along_axis(cand, sel, axis=1)
    kept_d = np.take_along_axis(cdist, sel, axis=1)
    kept_dvecs = np.take_along_axis(dvecs_all, sel[:, :, None], axis=1)
    kept_off = np.take_along_axis(off_all, sel, axis=1)

    # Final patch order: nondecreasing dvec norm, ties by neighbor index.
    order = _argsort_rows(kept_d, kept_idx)
    neighbor_idx = np.take_along_axis(kept_idx, order, axis=1)
    dvecs = np.take_along_axis(kept_dvecs, order[:, :, None], axis=1)
    offsets = np.take_along_axis(kept_off, order, axis=1)
    scales = kept_d.mean(axis=1)
    return dvecs, offsets, axes, scales, neighbor_idx


_ROTATIONS_90 = [
    np.eye(3),
    np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]]),   # x, +90
    np.array([[1.0, 0, 0], [0, 0, 1], [0, -1, 0]]),   # x, -90
    np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]]),   # y, +90
    np.array([[0.0, 0, -1], [0, 1, 0], [1, 0, 0]]),   # y, -90
    np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]]),   # z, +90
    np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 1]]),   # z, -90
]


def augment_rotations(cloud: PointCloud) -> list[PointCloud]:
    """Original cloud plus its six axis-aligned +/-90 degree rotations."""
    out = []
    for rot in _ROTATIONS_90:
        out.append(PointCloud(cloud.points @ rot.T, cloud.labels, cloud.predictions))
    return out


def mean_neighbor_distance(cloud: PointCloud, k: int = 16) -> float:
    """Mean Euclidean distance from each point to its k nearest neighbors."""
    if cloud.n < k + 1:
        raise InsufficientNeighborhood(f"need at least {k + 1} points, cloud has {cloud.n}")
    index = build_index(cloud)
    nn = index.query_many(cloud.points, k + 1)
    dist = np.linalg.norm(cloud.points[nn] - cloud.points[:, None, :], axis=2)
    # Remove each point itself from its own neighbor list; with duplicates
    # the self entry can sit anywhere in the zero-distance group, and the
    # dropped entry is interchangeable with it.
    is_self = nn == np.arange(cloud.n)[:, None]
    drop = np.where(is_self.any(axis=1), np.argmax(is_self, axis=1), 0)
    mask = np.ones_like(dist, dtype=bool)
    mask[np.arange(cloud.n), drop] = False
    return float(dist[mask].reshape(cloud.n, k).mean())


def add_gaussian_noise(cloud: PointCloud, ratio: float, seed: int) -> PointCloud:
    """Perturb coordinates with iid Gaussian noise of std ratio * Sd.

    Sd is the mean distance between points and their 16 nearest neighbors.
    """
    if not np.isfinite(ratio) or ratio < 0:
        raise InvalidInput(f"noise ratio must be a nonnegative scalar, got {ratio}")
    if ratio == 0.0:
        return cloud
    sd = mean_neighbor_distance(cloud, k=16)
    rng = np.random.default_rng(seed)
    noisy = cloud.points + rng.normal(0.0, ratio * sd, size=cloud.points.shape)
    return PointCloud(noisy, cloud.labels, cloud.predictions)


def downsample(cloud: PointCloud, keep_ratio: float, seed: int) -> PointCloud:
    """Keep round(keep_ratio * N) points, uniformly without replacement."""
    if not (0.0 < keep_ratio <= 1.0):
        raise InvalidInput(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    m = int(np.floor(keep_ratio * cloud.n + 0.5))
    if m < 1:
        raise InvalidInput("downsampling would leave an empty cloud")
    if m == cloud.n:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(cloud.n, size=m, replace=False))
    return PointCloud(
        cloud.points[idx],
        None if cloud.labels is None else cloud.labels[idx],
        None if cloud.predictions is None else cloud.predictions[idx],
    )


def deduplicate(cloud: PointCloud) -> PointCloud:
    """Drop exact coordinate duplicates, keeping the first occurrence."""
    _, first = np.unique(cloud.points, axis=0, return_index=True)
    if first.size == cloud.n:
        return cloud
    idx = np.sort(first)
    return PointCloud(
        cloud.points[idx],
        None if cloud.labels is None else cloud.labels[idx],
        None if cloud.predictions is None else cloud.predictions[idx],
    )
