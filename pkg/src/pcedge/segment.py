"""Surface segmentation: flood fill over a kNN graph bounded by edge points.

The graph links each point to its k nearest neighbors and is symmetrized.
Breadth-first waves grow from the lowest-index unvisited non-edge point;
edge points act as absorbing boundaries and keep segment id -1.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, build_index
from .errors import InsufficientNeighborhood, InvalidInput


@dataclass(frozen=True)
class SegmentationResult:
    segment_ids: np.ndarray  # (N,) int, -1 for edge/unreached points
    count: int
    sizes: list[int]


def knn_graph(cloud: PointCloud, k: int = 5) -> list[np.ndarray]:
    """Symmetrized kNN adjacency lists, each sorted by neighbor index."""
    if cloud.n < k + 1:
        raise InsufficientNeighborhood(f"kNN graph needs at least {k + 1} points, cloud has {cloud.n}")
    index = build_index(cloud)
    nn = index.query_many(cloud.points, k + 1)
    is_self = nn == np.arange(cloud.n)[:, None]
    drop = np.where(is_self.any(axis=1), np.argmax(is_self, axis=1), 0)
    mask = np.ones_like(nn, dtype=bool)
    mask[np.arange(cloud.n), drop] = False
    neighbors = nn[mask].reshape(cloud.n, k)

    src = np.repeat(np.arange(cloud.n), k)
    dst = neighbors.ravel()
    a = np.concatenate([src, dst])
    b = np.concatenate([dst, src])
    keys = np.unique(a.astype(np.int64) * cloud.n + b)
    out_src = keys // cloud.n
    out_dst = keys % cloud.n
    bounds = np.searchsorted(out_src, np.arange(cloud.n + 1))
    return [out_dst[bounds[i]:bounds[i + 1]] for i in range(cloud.n)]


def flood_segment(cloud: PointCloud, k: int = 5, attach_edges: bool = False) -> SegmentationResult:
    """Partition non-edge points into segments bounded by edge points.

    Seeds are taken in ascending index order, which makes the ids
    deterministic; the partition itself does not depend on seed order.
    With attach_edges=True every edge point is afterwards assigned the
    segment of its nearest non-edge point.
    """
    if cloud.labels is None:
        raise InvalidInput("flood_segment requires edge labels")
    adjacency = knn_graph(cloud, k)
    ids = np.full(cloud.n, -1, dtype=np.int64)
    is_edge = cloud.labels == 1
    visited = is_edge.copy()
    count = 0
    sizes: list[int] = []
    for seed in range(cloud.n):
        if visited[seed]:
            continue
        queue = deque([seed])
        visited[seed] = True
        size = 0
        while queue:
            node = queue.popleft()
            ids[node] = count
            size += 1
            for nb in adjacency[node]:
                if not visited[nb]:
                    visited[nb] = True
                    queue.append(nb)
        sizes.append(size)
        count += 1

    if attach_edges and count > 0 and is_edge.any():
        interior = np.nonzero(~is_edge)[0]
        if interior.size:
            index = build_index(PointCloud(cloud.points[interior]))
            nearest = index.query_many(cloud.points[is_edge], 1)[:, 0]
            ids[np.nonzero(is_edge)[0]] = ids[interior[nearest]]
    return SegmentationResult(segment_ids=ids, count=count, sizes=sizes)
