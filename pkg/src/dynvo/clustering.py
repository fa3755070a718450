"""Depth k-means segmentation and connected-component labeling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyDepth, InvalidArgument

INVALID = -1
MAX_CLUSTERS = 12
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class DepthStats:
    d_max: float
    d_min: float
    d_sd: float

    @classmethod
    def of(cls, depth: np.ndarray) -> "DepthStats":
        valid = depth[depth > 0]
        if valid.size == 0:
            raise EmptyDepth("no valid depth pixels")
        return cls(float(valid.max()), float(valid.min()), float(valid.std()))


@dataclass(frozen=True, eq=False)
class ClusterMap:
    labels: np.ndarray  # (H, W) int, INVALID where depth is missing
    centroids: np.ndarray  # ascending, meters

    @property
    def n_cluster(self) -> int:
        return len(self.centroids)

    @property
    def valid(self) -> np.ndarray:
        return self.labels != INVALID


@dataclass(frozen=True, eq=False)
class Components:
    """4-connected regions of equal cluster label, numbered in raster order."""

    labels: np.ndarray  # (H, W) int, INVALID outside valid depth
    sizes: np.ndarray
    cluster: np.ndarray  # cluster id of each component

    def __len__(self):
        return len(self.sizes)


def cluster_count(stats: DepthStats, max_clusters: int = MAX_CLUSTERS) -> int:
    """floor((d_max - d_min) / d_sd), clamped to [1, max_clusters]."""
    if stats.d_sd <= 0:
        return 1
    n = int(np.floor((stats.d_max - stats.d_min) / stats.d_sd))
    return int(min(max(n, 1), max_clusters))


def _assign(values, centroids):
    # ties at a midpoint go to the lower centroid
    mids = 0.5 * (centroids[:-1] + centroids[1:])
    return np.searchsorted(mids, values, side="left")


def _inertia(values, centroids, labels):
    return float(np.sum((values - centroids[labels]) ** 2))


def kmeans_1d(values: np.ndarray, n: int, tol: float = 1e-4, max_iter: int = 50, trace=None):
    """Lloyd's algorithm on scalars with quantile seeding.

    Returns ``(centroids, labels)`` with centroids ascending.  Empty clusters
    are dropped, so fewer than ``n`` centroids may come back.  If ``trace``
    is a list, the inertia after each assignment step is appended to it.
    """
    values = np.asarray(values, dtype=float)
    distinct = np.unique(values)
    n = int(min(n, distinct.size))
    centroids = np.quantile(values, (np.arange(n) + 0.5) / n)
    if np.any(np.diff(centroids) <= 0):
        centroids = np.quantile(distinct, (np.arange(n) + 0.5) / n)
    centroids = np.unique(centroids)
    labels = _assign(values, centroids)
    for _ in range(max_iter):
        if trace is not None:
            trace.append(_inertia(values, centroids, labels))
        counts = np.bincount(labels, minlength=len(centroids))
        sums = np.bincount(labels, weights=values, minlength=len(centroids))
        keep = counts > 0
        new = sums[keep] / counts[keep]
        shift = np.inf if keep.sum() != len(centroids) else np.max(np.abs(new - centroids))
        centroids = new
        labels = _assign(values, centroids)
        if shift < tol:
            break
    if trace is not None:
        trace.append(_inertia(values, centroids, labels))
    return centroids, labels


def kmeans_depth(depth: np.ndarray, n: int, seed: int = 0) -> ClusterMap:
    """Cluster valid depths into at most ``n`` groups.

    Seeding is deterministic (quantiles), so ``seed`` only exists to keep the
    call signature stable should a randomized initializer be added.
    """
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    valid = depth > 0
    if not valid.any():
        raise EmptyDepth("no valid depth pixels to cluster")
    centroids, lab = kmeans_1d(depth[valid], n)
    labels = np.full(depth.shape, INVALID, dtype=np.intp)
    labels[valid] = lab
    return ClusterMap(labels, centroids)


def cluster_depth(depth: np.ndarray, max_clusters: int = MAX_CLUSTERS, seed: int = 0) -> ClusterMap:
    """Pick the cluster count from depth statistics, then run k-means."""
    n = cluster_count(DepthStats.of(depth), max_clusters)
    return kmeans_depth(depth, n, seed)


def connected_components(cmap: ClusterMap) -> Components:
    labels = np.full(cmap.labels.shape, INVALID, dtype=np.intp)
    offset = 0
    for c in range(cmap.n_cluster):
        lab, count = ndimage.label(cmap.labels == c, structure=FOUR_CONNECTED)
        hit = lab > 0
        labels[hit] = lab[hit] + offset - 1
        offset += count
    if offset == 0:
        return Components(labels, np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp))
    # renumber by first occurrence in raster order
    flat = labels.ravel()
    ids, first = np.unique(flat[flat != INVALID], return_index=True)
    first_pos = np.flatnonzero(flat != INVALID)[first]
    order = np.argsort(first_pos, kind="stable")
    remap = np.empty(offset, dtype=np.intp)
    remap[ids[order]] = np.arange(offset)
    out = np.where(labels != INVALID, remap[np.maximum(labels, 0)], INVALID)
    sizes = np.bincount(out[out != INVALID], minlength=offset)
    cluster = np.zeros(offset, dtype=np.intp)
    cluster[out[out != INVALID]] = cmap.labels[out != INVALID]
    return Components(out, sizes, cluster)
