"""Per-pair pipeline and sequence chaining.

For a frame pair: fill depth holes, cluster frame A by depth, pre-eliminate
moving objects from depth gaps, then alternate alignment and residual-based
outlier rejection until the static background stops changing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignmentConfig, gauss_newton_align, reject_outliers
from .clustering import MAX_CLUSTERS, ClusterMap, cluster_depth, connected_components
from .dataset_io import Trajectory
from .errors import DegenerateGeometry, EmptyDepth, InsufficientOverlap, InvalidArgument
from .geometry import Intrinsics, PoseSE3
from .imaging import Frame, fill_depth_holes
from .motion_mask import MaskConfig, PreElimination, detect_dynamic, partition_regions

log = logging.getLogger(__name__)

MAX_REFINE_ITERS = 7


@dataclass(frozen=True)
class PipelineConfig:
    alignment: AlignmentConfig = AlignmentConfig()
    mask: MaskConfig = MaskConfig()
    max_refine_iters: int = MAX_REFINE_ITERS
    change_tol: float = 0.005  # fraction of pixels changing state
    max_clusters: int = MAX_CLUSTERS
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if not 1 <= self.max_refine_iters <= MAX_REFINE_ITERS:
            raise InvalidArgument(f"max_refine_iters must be in [1, {MAX_REFINE_ITERS}]")


@dataclass(frozen=True, eq=False)
class PairResult:
    pose: PoseSE3  # A-frame coordinates -> B-frame coordinates
    mask: np.ndarray
    iterations: int
    objectives: list
    change_fractions: list
    initial_mask: np.ndarray
    pre: PreElimination
    clusters: ClusterMap
    stats: list = field(default_factory=list)  # (round, level, iter, objective, step, n_valid, mean_huber)


def prepare_frame(frame: Frame) -> Frame:
    return frame.with_depth(fill_depth_holes(frame.depth))


def process_pair(
    frameA: Frame,
    frameB: Frame,
    K: Intrinsics,
    init: PoseSE3 | None = None,
    cfg: PipelineConfig = PipelineConfig(),
) -> PairResult:
    """Estimate the motion between two frames and the static background of A.

    Pre-elimination runs once; later rounds refine the mask only through
    residual outliers.  The loop stops when fewer than ``change_tol`` of the
    pixels change state, or after ``max_refine_iters`` rounds.
    """
    if frameA.shape != frameB.shape:
        raise InvalidArgument("frames must have equal dimensions")
    init = init or PoseSE3.identity()
    A, B = prepare_frame(frameA), prepare_frame(frameB)
    cmap = cluster_depth(A.depth, cfg.max_clusters, cfg.seed)
    comps = connected_components(cmap)
    grid = partition_regions(A.shape[1], A.shape[0], cfg.mask.block)
    pre = detect_dynamic(A, B, cmap, grid, cfg.mask, comps)
    mask = pre.mask
    pose = init
    objectives, changes, stats = [], [], []
    n_pix = mask.size
    for it in range(1, cfg.max_refine_iters + 1):
        try:
            pose, rset, st = gauss_newton_align(A, B, pose, mask, K, cfg.alignment)
        except (InsufficientOverlap, DegenerateGeometry) as e:
            e.pose = e.pose if e.pose is not None else pose
            raise
        stats.extend((it, *row) for row in st.rows)
        objectives.append(rset.objective)
        new_mask = reject_outliers(rset, mask, cfg.alignment, comps)
        change = float(np.count_nonzero(new_mask != mask)) / n_pix
        changes.append(change)
        mask = new_mask
        log.debug("pair %.3f: round %d objective %.4g change %.4f", frameA.timestamp, it, objectives[-1], change)
        if change < cfg.change_tol:
            break
    return PairResult(pose, mask, it, objectives, changes, pre.mask, pre, cmap, stats)


@dataclass(frozen=True, eq=False)
class SequenceResult:
    trajectory: Trajectory  # camera-to-world, first camera is the world frame
    relative: list  # per pair, A -> B
    fallback: list  # pair indices that reused the previous motion
    pairs: list  # PairResult, None for fallbacks or when not kept


def chain_relative(timestamps, relative) -> Trajectory:
    """World poses from pairwise motions: ``T_i = T_{i-1} ∘ inverse(rel_i)``."""
    poses = [PoseSE3.identity()]
    for rel in relative:
        poses.append(poses[-1] @ rel.inverse())
    return Trajectory(timestamps, poses)


def run_sequence(
    frames, K: Intrinsics, cfg: PipelineConfig = PipelineConfig(), on_pair=None, keep_pairs: bool = True
) -> SequenceResult:
    """Track a sequence pair by pair.

    ``frames`` may be any iterable; only two frames are held at a time.
    Each pair starts from the previous relative motion unless
    ``cfg.warm_start`` is off.  A failed pair logs a warning and reuses the
    previous motion.  ``on_pair(i, result)`` is called after every pair,
    with ``result`` None for fallbacks.  Without ``keep_pairs`` the per-pair
    results are not retained (``pairs`` holds None).
    """
    it = iter(frames)
    prev_frame = next(it, None)
    if prev_frame is None:
        raise InvalidArgument("need at least two frames")
    stamps = [prev_frame.timestamp]
    relative, fallback, results = [], [], []
    prev = PoseSE3.identity()
    for i, frame in enumerate(it, start=1):
        if frame.timestamp <= stamps[-1]:
            raise InvalidArgument("frame timestamps must be strictly increasing")
        stamps.append(frame.timestamp)
        init = prev if cfg.warm_start else PoseSE3.identity()
        try:
            res = process_pair(prev_frame, frame, K, init, cfg)
            rel = res.pose
        except (InsufficientOverlap, DegenerateGeometry, EmptyDepth) as e:
            log.warning("pair %d (t=%.6f) failed: %s; reusing previous motion", i, frame.timestamp, e)
            res, rel = None, prev
            fallback.append(i)
        relative.append(rel)
        results.append(res if keep_pairs else None)
        prev = rel
        prev_frame = frame
        if on_pair is not None:
            on_pair(i, res)
    if not relative:
        raise InvalidArgument("need at least two frames")
    return SequenceResult(chain_relative(np.array(stamps), relative), relative, fallback, results)
