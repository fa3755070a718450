"""TUM RGB-D layout, trajectory files and point-cloud export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DatasetIOError, EmptyAssociation, FormatError, InvalidArgument
from .geometry import Intrinsics, PoseSE3, backproject_image
from .imaging import Frame, load_frame
from .motion_mask import STATIC

# Default ROS calibration of the TUM sequences; per-camera values below.
TUM_DEFAULT = dict(fx=525.0, fy=525.0, cx=319.5, cy=239.5)
TUM_CAMERAS = {
    "freiburg1": dict(fx=517.3, fy=516.5, cx=318.6, cy=255.3),
    "freiburg2": dict(fx=520.9, fy=521.0, cx=325.1, cy=249.7),
    "freiburg3": dict(fx=535.4, fy=539.2, cx=320.1, cy=247.6),
}
QUAT_NORM_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(ts) != len(self.poses):
            raise InvalidArgument("timestamps and poses differ in length")
        if np.any(np.diff(ts) <= 0):
            raise InvalidArgument("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", list(self.poses))

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, g: PoseSE3) -> "Trajectory":
        """Every pose left-composed with ``g`` (a change of world frame)."""
        return Trajectory(self.timestamps, [g @ p for p in self.poses])


# --- trajectory files -------------------------------------------------------


def _fmt(x: float) -> str:
    # shortest repr that round-trips; "+ 0.0" folds -0 into 0
    return np.format_float_positional(float(x) + 0.0, trim="-")


def pose_to_tum(pose: PoseSE3):
    q = Rotation.from_matrix(pose.rotation).as_quat()  # x, y, z, w
    if q[3] < 0:
        q = -q
    return np.concatenate([pose.translation, q])


def format_trajectory(traj: Trajectory) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for t, pose in traj:
        lines.append(" ".join(_fmt(x) for x in [t, *pose_to_tum(pose)]))
    return "\n".join(lines) + "\n"


def write_trajectory(path, traj: Trajectory):
    try:
        Path(path).write_text(format_trajectory(traj))
    except OSError as e:
        raise DatasetIOError(f"cannot write {path}: {e}") from e


def parse_trajectory(text: str) -> Trajectory:
    stamps, poses = [], []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise FormatError(f"expected 8 fields, got {len(parts)}", n)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError("non-numeric field", n) from None
        q = np.array(vals[4:8])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise FormatError(f"quaternion norm {norm:.6f} is not 1", n)
        stamps.append(vals[0])
        poses.append(PoseSE3(Rotation.from_quat(q / norm).as_matrix(), vals[1:4]))
    order = np.argsort(stamps, kind="stable")
    try:
        return Trajectory(np.array(stamps)[order], [poses[i] for i in order])
    except InvalidArgument as e:
        raise FormatError(str(e)) from e


def read_trajectory(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e
    return parse_trajectory(text)


# --- TUM sequences ----------------------------------------------------------


def read_file_list(path) -> list[tuple[float, str]]:
    """``timestamp value...`` lines of a TUM index file, comments skipped."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DatasetIOError(f"cannot read {path}: {e}") from e
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            out.append((float(parts[0]), " ".join(parts[1:])))
        except ValueError:
            raise FormatError(f"{path}: bad timestamp", n) from None
    return out


def associate(first, second, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching of two sorted stamp arrays.

    Candidate pairs within ``max_dt`` are taken in order of increasing time
    difference; each entry is used at most once.  Returns index pairs sorted
    by the first list.  Ties are broken on the stamps themselves, irrespective
    of which list they came from, so swapping the arguments swaps the pairs.
    """
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    order_b = np.argsort(b, kind="stable")
    bs = b[order_b]
    cands = []
    for i, t in enumerate(a):
        lo = np.searchsorted(bs, t - max_dt, side="left")
        hi = np.searchsorted(bs, t + max_dt, side="right")
        for jj in range(lo, hi):
            j = int(order_b[jj])
            d = abs(t - b[j])
            if d <= max_dt:
                cands.append((d, min(t, b[j]), max(t, b[j]), i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, _, _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    return pairs


def read_camera_file(path) -> dict:
    vals = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: expected key = value", n)
        k, v = (s.strip() for s in line.split("=", 1))
        vals[k] = float(v)
    return vals


def guess_intrinsics(directory, width: int = 640, height: int = 480, depth_scale: float = 5000.0) -> Intrinsics:
    """Intrinsics from ``camera.txt`` if present, else from the sequence name."""
    directory = Path(directory)
    cam = directory / "camera.txt"
    if cam.exists():
        v = read_camera_file(cam)
        return Intrinsics(
            v["fx"], v["fy"], v["cx"], v["cy"], int(v["width"]), int(v["height"]),
            v.get("depth_scale", depth_scale),
        )
    params = TUM_DEFAULT
    for key, p in TUM_CAMERAS.items():
        if key in directory.name:
            params = p
    return Intrinsics(width=width, height=height, depth_scale=depth_scale, **params)


@dataclass(frozen=True, eq=False)
class AssociatedSequence:
    root: Path
    timestamps: np.ndarray
    rgb: list
    depth: list
    intrinsics: Intrinsics
    groundtruth: Trajectory | None = None

    def __len__(self):
        return len(self.timestamps)

    def frame(self, i: int) -> Frame:
        return load_frame(
            self.root / self.rgb[i], self.root / self.depth[i], float(self.timestamps[i]),
            self.intrinsics.depth_scale,
        )

    def frames(self, start: int = 0, stop: int | None = None):
        for i in range(start, len(self) if stop is None else min(stop, len(self))):
            yield self.frame(i)


def load_tum(directory, max_dt: float = 0.02, intrinsics: Intrinsics | None = None,
             depth_scale: float = 5000.0) -> AssociatedSequence:
    directory = Path(directory)
    rgb_list = directory / "rgb.txt"
    depth_list = directory / "depth.txt"
    for p in (rgb_list, depth_list):
        if not p.exists():
            raise DatasetIOError(f"missing index file {p}")
    rgb = sorted(read_file_list(rgb_list))
    depth = sorted(read_file_list(depth_list))
    pairs = associate([t for t, _ in rgb], [t for t, _ in depth], max_dt)
    if not pairs:
        raise EmptyAssociation(f"no rgb/depth pairs within {max_dt} s in {directory}")
    # the rgb stamp names the frame
    stamps = np.array([rgb[i][0] for i, _ in pairs])
    gt = None
    gt_path = directory / "groundtruth.txt"
    if gt_path.exists():
        gt = read_trajectory(gt_path)
    if intrinsics is None:
        intrinsics = guess_intrinsics(directory, depth_scale=depth_scale)
    return AssociatedSequence(
        directory, stamps, [rgb[i][1] for i, _ in pairs], [depth[j][1] for _, j in pairs],
        intrinsics, gt,
    )


# --- point clouds -----------------------------------------------------------


def cloud_points(frames, poses, masks, K: Intrinsics, stride: int = 1):
    """World points and 8-bit gray values of every STATIC, depth-valid pixel."""
    if not (len(frames) == len(poses) == len(masks)):
        raise InvalidArgument("frames, poses and masks must have equal length")
    pts, gray = [], []
    for frame, pose, mask in zip(frames, poses, masks):
        cam = backproject_image(K, frame.depth)[::stride, ::stride]
        keep = (frame.depth[::stride, ::stride] > 0) & (mask[::stride, ::stride] == STATIC)
        pts.append(pose.apply(cam[keep]))
        g = np.round(frame.intensity[::stride, ::stride][keep] * 255.0)
        gray.append(np.clip(g, 0, 255).astype(np.uint8))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.uint8)
    return np.concatenate(pts).reshape(-1, 3), np.concatenate(gray)


def write_ply(path, points: np.ndarray, gray: np.ndarray):
    header = "\n".join(
        [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(points)}",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            "end_header",
        ]
    )
    body = "".join(
        f"{x:.9g} {y:.9g} {z:.9g} {g} {g} {g}\n" for (x, y, z), g in zip(points, gray.tolist())
    )
    try:
        Path(path).write_text(header + "\n" + body)
    except OSError as e:
        raise DatasetIOError(f"cannot write {path}: {e}") from e


def read_ply(path):
    """Points and gray values of an ASCII PLY written by :func:`write_ply`."""
    lines = Path(path).read_text().splitlines()
    end = lines.index("end_header")
    n = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.uint8)
    data = np.loadtxt(lines[end + 1 : end + 1 + n], ndmin=2)
    return data[:, :3], data[:, 3].astype(np.uint8)


def export_point_cloud(path, frames, poses, masks, K: Intrinsics, stride: int = 1):
    """Write the static part of a sequence as one ASCII PLY cloud in world frame.

    ``poses`` are camera-to-world.  Returns the number of points written.
    """
    pts, gray = cloud_points(frames, poses, masks, K, stride)
    write_ply(path, pts, gray)
    return len(pts)
