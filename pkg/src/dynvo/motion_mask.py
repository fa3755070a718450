"""Moving-object pre-elimination from depth alone.

The image is tiled into square regions.  Inside each region, the depth gap
across every cluster boundary of frame A is measured in both frames at the
same pixel positions.  If only the camera moved, each gap either stays the
same (translation) or all gaps in the region scale by a common factor
(rotation).  Regions where most of the gap mass breaks both rules are
dynamic, and the depth cluster whose side of the boundary changed is removed
along with its largest connected component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import INVALID, ClusterMap, Components, connected_components
from .errors import InvalidArgument
from .imaging import Frame

STATIC = np.uint8(0)
DYNAMIC = np.uint8(1)
MASK_INVALID = np.uint8(2)

HORIZONTAL = 0
VERTICAL = 1


@dataclass(frozen=True)
class MaskConfig:
    block: int = 40
    tau_abs: float = 0.05  # m
    tau_rel: float = 0.1
    threshold: float = 0.5
    # half-length of the segment, normal to a boundary, over which the gap is read;
    # must exceed the boundary's image motion between the two frames
    edge_window: int = 12
    # the proportional rule only applies to gap ratios a camera motion can produce
    ratio_range: tuple = (0.5, 2.0)

    def __post_init__(self):
        if self.block < 8:
            raise InvalidArgument("block must be at least 8 pixels")
        if self.edge_window < 1:
            raise InvalidArgument("edge_window must be at least 1")
        if not (self.tau_abs > 0 and self.tau_rel > 0):
            raise InvalidArgument("tolerances must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidArgument("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class RegionGrid:
    width: int
    height: int
    block: int

    def __post_init__(self):
        if self.block < 8:
            raise InvalidArgument("block must be at least 8 pixels")

    @property
    def cols(self) -> int:
        return math.ceil(self.width / self.block)

    @property
    def rows(self) -> int:
        return math.ceil(self.height / self.block)

    @property
    def k(self) -> int:
        return self.rows * self.cols

    @property
    def index(self) -> np.ndarray:
        v = np.arange(self.height)[:, None] // self.block
        u = np.arange(self.width)[None, :] // self.block
        return v * self.cols + u

    def bounds(self, region: int):
        """``(v0, v1, u0, u1)`` slice bounds of a region."""
        r, c = divmod(region, self.cols)
        b = self.block
        return r * b, min((r + 1) * b, self.height), c * b, min((c + 1) * b, self.width)


def partition_regions(width: int, height: int, block: int = 40) -> RegionGrid:
    return RegionGrid(width, height, block)


@dataclass(frozen=True, eq=False)
class EdgeGapProfile:
    """Depth gaps sampled across cluster boundaries.

    One entry per horizontally or vertically adjacent pixel pair whose
    cluster labels differ.  Entry arrays are aligned; ``edge`` is per region.
    """

    region: np.ndarray
    v: np.ndarray
    u: np.ndarray
    orient: np.ndarray
    near: np.ndarray
    far: np.ndarray
    cluster_first: np.ndarray
    cluster_second: np.ndarray
    near_cluster: np.ndarray  # labels of the pixels holding ``near`` / ``far``
    far_cluster: np.ndarray
    edge: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.far - self.near

    def __len__(self):
        return len(self.region)

    def in_region(self, region: int) -> np.ndarray:
        return np.flatnonzero(self.region == region)


def _segment_extrema(depth: np.ndarray, half: int, axis: int, vv, uu):
    """Min/max of valid depth over segments straddling adjacent pairs.

    The pair starting at ``(vv, uu)`` and continuing along ``axis`` gets the
    segment ``i - half + 1 .. i + half`` in that direction.  Returns
    ``lo, hi`` (NaN where the segment has no valid depth) and the pixel
    coordinates ``(v, u)`` holding each extreme.
    """
    h, w = depth.shape
    offsets = np.arange(-half + 1, half + 1)
    if axis == 1:
        cu = uu[:, None] + offsets
        cv = np.broadcast_to(vv[:, None], cu.shape)
        inside = (cu >= 0) & (cu < w)
    else:
        cv = vv[:, None] + offsets
        cu = np.broadcast_to(uu[:, None], cv.shape)
        inside = (cv >= 0) & (cv < h)
    seg = depth[np.clip(cv, 0, h - 1), np.clip(cu, 0, w - 1)]
    seg = np.where(inside & (seg > 0), seg, np.nan)
    missing = np.isnan(seg)
    lo_arg = np.argmin(np.where(missing, np.inf, seg), axis=1)
    hi_arg = np.argmax(np.where(missing, -np.inf, seg), axis=1)
    rows = np.arange(len(seg))
    lo, hi = seg[rows, lo_arg], seg[rows, hi_arg]
    lo_at = (cv[rows, lo_arg].clip(0, h - 1), cu[rows, lo_arg].clip(0, w - 1))
    hi_at = (cv[rows, hi_arg].clip(0, h - 1), cu[rows, hi_arg].clip(0, w - 1))
    return lo, hi, lo_at, hi_at


def edge_gap_profile(
    depth: np.ndarray, grid: RegionGrid, cmap: ClusterMap, edge_window: int = 1
) -> EdgeGapProfile:
    """Sample depth gaps across the cluster boundaries of ``cmap``.

    Boundaries come from ``cmap``, depths from ``depth``; profiling a second
    frame's depth with the first frame's cluster map gives a profile whose
    entries pair positionally with the first one.  The gap at a boundary is
    the depth range over a segment of ``2 * edge_window`` pixels normal to it;
    it is NaN where that segment holds no valid depth.
    """
    if depth.shape != cmap.labels.shape or depth.shape != (grid.height, grid.width):
        raise InvalidArgument("depth, cluster map and grid must share dimensions")
    lab = cmap.labels
    region_index = grid.index
    parts = []
    for orient, axis in ((HORIZONTAL, 1), (VERTICAL, 0)):
        if axis == 1:
            a, b = lab[:, :-1], lab[:, 1:]
        else:
            a, b = lab[:-1, :], lab[1:, :]
        hit = (a != b) & (a != INVALID) & (b != INVALID)
        if not hit.any():
            continue
        vv, uu = np.nonzero(hit)
        lo, hi, lo_at, hi_at = _segment_extrema(depth, edge_window, axis, vv, uu)
        parts.append(
            dict(
                region=region_index[vv, uu],
                v=vv,
                u=uu,
                orient=np.full(vv.size, orient),
                near=lo,
                far=hi,
                cluster_first=a[vv, uu],
                cluster_second=b[vv, uu],
                near_cluster=lab[lo_at],
                far_cluster=lab[hi_at],
            )
        )
    keys = [
        "region", "v", "u", "orient", "near", "far",
        "cluster_first", "cluster_second", "near_cluster", "far_cluster",
    ]
    if parts:
        fields = {k: np.concatenate([p[k] for p in parts]) for k in keys}
    else:
        fields = {k: np.zeros(0, dtype=float if k in ("near", "far") else np.intp) for k in keys}
    edge = np.zeros(grid.k, dtype=bool)
    edge[fields["region"]] = True
    return EdgeGapProfile(edge=edge, **fields)


def _check_paired(profA: EdgeGapProfile, profB: EdgeGapProfile):
    if len(profA) != len(profB) or not (
        np.array_equal(profA.v, profB.v)
        and np.array_equal(profA.u, profB.u)
        and np.array_equal(profA.orient, profB.orient)
    ):
        raise InvalidArgument("profiles must be sampled at the same boundary positions")


def _pair_consistency(gap_a, gap_b, cfg: MaskConfig):
    """Consistency flags for the pairs of one region."""
    translation_ok = np.abs(gap_b - gap_a) <= cfg.tau_abs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gap_a > 0, gap_b / gap_a, np.inf)
    finite = np.isfinite(ratio)
    proportional_ok = np.zeros_like(translation_ok)
    if finite.any():
        rho = float(np.median(ratio[finite]))
        lo, hi = cfg.ratio_range
        if lo <= rho <= hi:
            proportional_ok = finite & (np.abs(ratio - rho) <= cfg.tau_rel)
    return translation_ok | proportional_ok


def _usable(profA, profB, idx):
    ok = np.isfinite(profA.gap[idx]) & np.isfinite(profB.gap[idx])
    return idx[ok]


def region_dynamic_coefficient(
    profA: EdgeGapProfile, profB: EdgeGapProfile, region: int, cfg: MaskConfig = MaskConfig()
) -> float:
    """Gap-weighted fraction of boundary samples breaking both static-scene rules."""
    _check_paired(profA, profB)
    idx = _usable(profA, profB, profA.in_region(region))
    if idx.size == 0:
        return 0.0
    gap_a, gap_b = profA.gap[idx], profB.gap[idx]
    consistent = _pair_consistency(gap_a, gap_b, cfg)
    weight = gap_a
    total = weight.sum()
    if total <= 0:
        return 0.0
    return float(weight[~consistent].sum() / total)


def dynamic_coefficients(
    profA: EdgeGapProfile, profB: EdgeGapProfile, k: int, cfg: MaskConfig = MaskConfig()
) -> np.ndarray:
    return np.array([region_dynamic_coefficient(profA, profB, r, cfg) for r in range(k)])


def _side_culprit(before, after, cluster_before, centroids, tau):
    """Cluster to blame for one side of a boundary, INVALID if it held still.

    A side that receded lost the surface frame A saw there; a side that came
    nearer was taken over by whatever surface now shows, identified by depth.
    """
    receded = after - before > tau
    advanced = before - after > tau
    intruder = np.argmin(np.abs(after[:, None] - centroids[None, :]), axis=1)
    return np.where(receded, cluster_before, np.where(advanced, intruder, INVALID))


def _moved_cluster(profA: EdgeGapProfile, profB: EdgeGapProfile, idx, centroids, cfg: MaskConfig):
    """Cluster whose side of the boundary changed depth, by gap-weighted vote."""
    idx = _usable(profA, profB, idx)
    gap_a, gap_b = profA.gap[idx], profB.gap[idx]
    bad = ~_pair_consistency(gap_a, gap_b, cfg)
    idx = idx[bad]
    if idx.size == 0:
        return None
    centroids = np.asarray(centroids, dtype=float)
    near = _side_culprit(profA.near[idx], profB.near[idx], profA.near_cluster[idx], centroids, cfg.tau_abs)
    far = _side_culprit(profA.far[idx], profB.far[idx], profA.far_cluster[idx], centroids, cfg.tau_abs)
    # an occluding foreground is the usual culprit when both sides changed
    blame = np.where(near != INVALID, near, far)
    weight = gap_a[bad]
    keep = blame != INVALID
    if not keep.any():
        return None
    votes = {}
    for c, w in zip(blame[keep], weight[keep]):
        votes[int(c)] = votes.get(int(c), 0.0) + float(w)
    # deterministic: highest vote, then lowest cluster id
    return min(votes, key=lambda c: (-votes[c], c))


@dataclass(frozen=True, eq=False)
class PreElimination:
    mask: np.ndarray
    coefficients: np.ndarray
    triggered: np.ndarray  # region ids with coefficient above threshold
    blamed: dict  # region id -> cluster id


def detect_dynamic(
    frameA: Frame,
    frameB: Frame,
    cmapA: ClusterMap,
    grid: RegionGrid,
    cfg: MaskConfig = MaskConfig(),
    components: Components | None = None,
) -> PreElimination:
    """Pre-elimination with the per-region diagnostics kept."""
    if frameA.shape != frameB.shape or frameA.shape != cmapA.labels.shape:
        raise InvalidArgument("frames and cluster map must share dimensions")
    if components is None:
        components = connected_components(cmapA)
    profA = edge_gap_profile(frameA.depth, grid, cmapA, cfg.edge_window)
    profB = edge_gap_profile(frameB.depth, grid, cmapA, cfg.edge_window)
    coeff = dynamic_coefficients(profA, profB, grid.k, cfg)

    mask = np.where(frameA.depth > 0, STATIC, MASK_INVALID).astype(np.uint8)
    region_index = grid.index
    triggered = np.flatnonzero(coeff > cfg.threshold)
    blamed = {}
    for region in triggered:
        cluster = _moved_cluster(profA, profB, profA.in_region(region), cmapA.centroids, cfg)
        if cluster is None:
            continue
        blamed[int(region)] = cluster
        in_region = (region_index == region) & (cmapA.labels == cluster)
        comps = np.unique(components.labels[in_region])
        comps = comps[comps != INVALID]
        if comps.size:
            # ties go to the lower (earlier in raster order) component
            largest = comps[np.argmax(components.sizes[comps])]
            mask[components.labels == largest] = DYNAMIC
        mask[in_region] = DYNAMIC
    mask[frameA.depth <= 0] = MASK_INVALID
    return PreElimination(mask, coeff, triggered, blamed)


def pre_eliminate(
    frameA: Frame,
    frameB: Frame,
    cmapA: ClusterMap,
    grid: RegionGrid,
    cfg: MaskConfig = MaskConfig(),
    components: Components | None = None,
) -> np.ndarray:
    """Motion mask of frame A (STATIC / DYNAMIC / MASK_INVALID codes)."""
    return detect_dynamic(frameA, frameB, cmapA, grid, cfg, components).mask


def mask_to_png_values(mask: np.ndarray) -> np.ndarray:
    """0 static, 128 invalid, 255 dynamic."""
    out = np.zeros(mask.shape, dtype=np.uint8)
    out[mask == DYNAMIC] = 255
    out[mask == MASK_INVALID] = 128
    return out
