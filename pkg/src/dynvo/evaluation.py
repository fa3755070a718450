"""Trajectory error metrics in the usual RGB-D benchmark conventions.

Relative pose error compares motions over a fixed time step; absolute
trajectory error compares positions after the best rigid alignment of the
estimate onto the ground truth.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset_io import Trajectory, associate
from .errors import EmptyAssociation, InsufficientData, InvalidArgument
from .geometry import PoseSE3, orthonormalize

MAX_DT = 0.02  # s, timestamp association tolerance


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    median: float
    std: float
    min: float
    max: float

    @classmethod
    def of(cls, errors) -> "ErrorStats":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise InsufficientData("no error samples")
        return cls(
            float(np.sqrt(np.mean(e * e))),
            float(np.mean(e)),
            float(np.median(e)),
            float(np.std(e)),
            float(np.min(e)),
            float(np.max(e)),
        )


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Translational and (optionally) rotational error of one estimate.

    Units are m/s and deg/s for per-second relative errors, m and deg for
    absolute ones.  Per-sample errors are kept, aligned with ``timestamps``.
    """

    metric: str
    trans_unit: str
    rot_unit: str
    trans: ErrorStats
    rot: ErrorStats | None
    timestamps: np.ndarray
    trans_errors: np.ndarray
    rot_errors: np.ndarray | None

    @property
    def count(self) -> int:
        return len(self.timestamps)


def _matched(gt: Trajectory, est: Trajectory, max_dt: float):
    pairs = associate(est.timestamps, gt.timestamps, max_dt)
    if not pairs:
        raise EmptyAssociation(f"no estimate pose has ground truth within {max_dt} s")
    ei = np.array([i for i, _ in pairs])
    gi = np.array([j for _, j in pairs])
    return ei, gi


def _rpe_pairs(stamps, delta, max_dt, per_frame):
    """Index pairs ``(a, b)`` into the matched list, ``b`` about ``delta`` after ``a``."""
    n = len(stamps)
    if per_frame:
        return [(a, a + delta) for a in range(n - delta)]
    out = []
    for a in range(n):
        target = stamps[a] + delta
        b = int(np.searchsorted(stamps, target))
        cands = [c for c in (b - 1, b) if a < c < n]
        if not cands:
            continue
        c = min(cands, key=lambda c: abs(stamps[c] - target))
        if abs(stamps[c] - target) <= max_dt:
            out.append((a, c))
    return out


def relative_pose_error(
    gt: Trajectory,
    est: Trajectory,
    delta: float = 1.0,
    max_dt: float = MAX_DT,
    per_frame: bool = False,
) -> MetricReport:
    """Relative pose error over a time step of ``delta`` seconds.

    For each estimate time ``t`` with an estimate at ``t + delta`` (within
    ``max_dt``), ``E = (Q_t^-1 Q_t+d)^-1 (P_t^-1 P_t+d)`` with ground truth
    ``Q`` and estimate ``P``; the translation norm and rotation angle of
    ``E`` are divided by ``delta``.  With ``per_frame``, ``delta`` is a whole
    number of matched frames and errors are per frame step.
    """
    if not delta > 0:
        raise InvalidArgument("delta must be positive")
    if per_frame and int(delta) != delta:
        raise InvalidArgument("a per-frame delta must be a whole number of frames")
    ei, gi = _matched(gt, est, max_dt)
    stamps = est.timestamps[ei]
    pairs = _rpe_pairs(stamps, int(delta) if per_frame else delta, max_dt, per_frame)
    if not pairs:
        raise EmptyAssociation(f"no estimate pose pairs {delta} {'frames' if per_frame else 's'} apart")
    trans, rot = [], []
    for a, b in pairs:
        q = gt.poses[gi[a]].inverse() @ gt.poses[gi[b]]
        p = est.poses[ei[a]].inverse() @ est.poses[ei[b]]
        e = q.inverse() @ p
        trans.append(np.linalg.norm(e.translation) / delta)
        rot.append(np.rad2deg(e.rotation_angle()) / delta)
    trans, rot = np.array(trans), np.array(rot)
    units = ("m/frame", "deg/frame") if per_frame else ("m/s", "deg/s")
    return MetricReport(
        "rpe", *units, ErrorStats.of(trans), ErrorStats.of(rot),
        stamps[[a for a, _ in pairs]], trans, rot,
    )


def align_rigid(src: np.ndarray, dst: np.ndarray) -> PoseSE3:
    """Rigid transform ``g`` minimizing ``sum |g(src_i) - dst_i|^2`` (no scale).

    Rotation from the SVD of the cross-covariance; for degenerate point sets
    the singular vector of the smallest singular value takes the sign that
    makes the determinant +1.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if np.array_equal(src, dst):
        # exact, rather than the SVD's rounding noise
        return PoseSE3.identity()
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = orthonormalize(U @ S @ Vt)
    return PoseSE3(R, mu_d - R @ mu_s)


def absolute_trajectory_error(
    gt: Trajectory, est: Trajectory, max_dt: float = MAX_DT, rotation: bool = False
) -> MetricReport:
    """Position error after rigidly aligning the estimate onto ground truth.

    With ``rotation``, the orientation error of each aligned pose is
    reported too.
    """
    ei, gi = _matched(gt, est, max_dt)
    if len(ei) < 3:
        raise InsufficientData(f"need at least 3 matched poses, got {len(ei)}")
    g = gt.positions[gi]
    p = est.positions[ei]
    T = align_rigid(p, g)
    err = np.linalg.norm(T.apply(p) - g, axis=1)
    rot = rot_stats = None
    if rotation:
        rot = np.array(
            [np.rad2deg((gt.poses[j].inverse() @ T @ est.poses[i]).rotation_angle()) for i, j in zip(ei, gi)]
        )
        rot_stats = ErrorStats.of(rot)
    return MetricReport("ate", "m", "deg", ErrorStats.of(err), rot_stats, est.timestamps[ei], err, rot)


REPORT_FIELDS = [
    "metric", "count",
    "trans_unit", "trans_rmse", "trans_mean", "trans_median", "trans_std", "trans_min", "trans_max",
    "rot_unit", "rot_rmse", "rot_mean", "rot_median", "rot_std", "rot_min", "rot_max",
]


def _stat_cells(s: ErrorStats | None):
    if s is None:
        return [""] * 6
    return [repr(x) for x in (s.rmse, s.mean, s.median, s.std, s.min, s.max)]


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        w.writerow(
            [r.metric, r.count, r.trans_unit, *_stat_cells(r.trans),
             r.rot_unit if r.rot is not None else "", *_stat_cells(r.rot)]
        )
    return buf.getvalue()


def errors_csv(report: MetricReport) -> str:
    """Per-sample error series for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["timestamp", f"trans_{report.trans_unit}"]
    if report.rot_errors is not None:
        header.append(f"rot_{report.rot_unit}")
    w.writerow(header)
    for i, t in enumerate(report.timestamps):
        row = [repr(float(t)), repr(float(report.trans_errors[i]))]
        if report.rot_errors is not None:
            row.append(repr(float(report.rot_errors[i])))
        w.writerow(row)
    return buf.getvalue()
