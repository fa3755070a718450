"""Ray-cast synthetic RGB-D sequences with exact ground truth.

Scenes are piecewise planar: one background (an infinite plane or the
inside of an axis-aligned room) plus rigid box movers.  Every pixel ray is
intersected analytically and the nearest hit wins.  Surfaces carry a smooth
procedural texture whose sign pattern is a checkerboard, so intensity has a
nonzero gradient almost everywhere and bilinear interpolation stays accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset_io import Trajectory, write_trajectory
from .errors import DegenerateScene, FormatError, InvalidArgument
from .geometry import Intrinsics, PoseSE3, left_jacobian, se3_exp
from .imaging import Frame, write_depth_png, write_gray_png

BACKGROUND = -1
NO_HIT = -2


@dataclass(frozen=True)
class Texture:
    wavelength: float = 0.3  # m
    amplitude: float = 0.25

    def __call__(self, a, b, seed_offset: float = 0.0):
        k = 2.0 * np.pi / self.wavelength
        checker = np.sin(k * a + seed_offset) * np.sin(k * b + 0.7 * seed_offset)
        # a slanted second component breaks the lattice symmetry of the checker
        k2 = 2.0 * np.pi / (1.7 * self.wavelength)
        slant = np.sin(k2 * (0.6 * a + 0.8 * b) + 1.3 * seed_offset)
        return np.clip(0.5 + self.amplitude * checker + 0.4 * self.amplitude * slant, 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    point: tuple = (0.0, 0.0, 3.0)
    normal: tuple = (0.0, 0.0, -1.0)


@dataclass(frozen=True)
class Room:
    lo: tuple = (-2.0, -1.5, -1.0)
    hi: tuple = (2.0, 1.5, 4.0)


@dataclass(frozen=True)
class Box:
    """Box mover; ``poses`` are box-to-world per frame (centered box frame)."""

    size: tuple
    poses: tuple

    def pose(self, i: int) -> PoseSE3:
        return self.poses[i]


@dataclass(frozen=True)
class SceneSpec:
    intrinsics: Intrinsics
    camera_poses: tuple  # camera-to-world, one per frame
    background: Plane | Room = Plane()
    movers: tuple = ()
    noise: float = 0.0  # depth noise sigma, m
    texture: Texture = Texture()
    fps: float = 30.0
    t0: float = 0.0

    def __post_init__(self):
        if len(self.camera_poses) < 2:
            raise InvalidArgument("a scene needs at least two frames")
        if self.noise < 0:
            raise InvalidArgument("noise must be non-negative")
        for m in self.movers:
            if len(m.poses) != len(self.camera_poses):
                raise InvalidArgument("every mover needs one pose per frame")

    @property
    def n_frames(self) -> int:
        return len(self.camera_poses)

    def timestamp(self, i: int) -> float:
        return self.t0 + i / self.fps


@dataclass(frozen=True, eq=False)
class SyntheticSequence:
    spec: SceneSpec
    frames: list
    trajectory: Trajectory  # camera-to-world ground truth
    masks: list  # bool (H, W): pixels on a mover that moved since the previous frame
    object_ids: list  # int (H, W): mover index, BACKGROUND or NO_HIT

    def moving_mask(self, i: int, j: int) -> np.ndarray:
        """Pixels of frame ``i`` on movers whose pose differs between ``i`` and ``j``."""
        moved = [k for k, m in enumerate(self.spec.movers) if not m.pose(i).allclose(m.pose(j), 1e-12)]
        return np.isin(self.object_ids[i], moved)

    def relative_pose(self, i: int, j: int) -> PoseSE3:
        """Ground-truth transform taking frame-``i`` camera coordinates to frame ``j``."""
        return self.trajectory.poses[j].inverse() @ self.trajectory.poses[i]


def _pixel_rays(K: Intrinsics):
    u = np.arange(K.width, dtype=float)[None, :]
    v = np.arange(K.height, dtype=float)[:, None]
    d = np.empty((K.height, K.width, 3))
    d[..., 0] = (u - K.cx) / K.fx
    d[..., 1] = (v - K.cy) / K.fy
    d[..., 2] = 1.0
    return d


def _plane_hit(plane: Plane, o, d):
    n = np.asarray(plane.normal, dtype=float)
    n = n / np.linalg.norm(n)
    p0 = np.asarray(plane.point, dtype=float)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((p0 - o) @ n) / denom
    s = np.where((np.abs(denom) > 1e-12) & (s > 0), s, np.inf)
    # in-plane texture axes
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    X = o + s[..., None] * d
    rel = np.where(np.isfinite(s)[..., None], X - p0, 0.0)
    return s, rel @ e1, rel @ e2


def _slabs(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    # rays parallel to a slab: inside -> unbounded, outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    near = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    far = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return near, far


def _room_hit(room: Room, o, d):
    lo, hi = np.asarray(room.lo, float), np.asarray(room.hi, float)
    if not np.all((o > lo) & (o < hi)):
        raise DegenerateScene("camera is outside the room")
    _, far = _slabs(o, d, lo, hi)
    axis = np.argmin(far, axis=-1)
    s = np.take_along_axis(far, axis[..., None], -1)[..., 0]
    X = o + s[..., None] * d
    # texture coordinates: the two axes spanning the hit face
    a = np.where(axis == 0, X[..., 1], X[..., 0])
    b = np.where(axis == 2, X[..., 1], X[..., 2])
    return s, a + 3.1 * axis, b


def _box_hit(box: Box, pose: PoseSE3, o, d):
    h = 0.5 * np.asarray(box.size, dtype=float)
    R, t = pose.rotation, pose.translation
    ob = R.T @ (o - t)
    if np.all(np.abs(ob) < h):
        raise DegenerateScene("camera is inside a mover")
    db = d @ R  # rows: R^T d
    near, far = _slabs(ob, db, -h, h)
    t_in = near.max(axis=-1)
    t_out = far.min(axis=-1)
    hit = (t_in <= t_out) & (t_in > 0)
    s = np.where(hit, t_in, np.inf)
    axis = np.argmax(near, axis=-1)
    X = ob + np.where(hit, t_in, 0.0)[..., None] * db
    a = np.where(axis == 0, X[..., 1], X[..., 0])
    b = np.where(axis == 2, X[..., 1], X[..., 2])
    return s, a, b


def render_frame(spec: SceneSpec, i: int):
    """Noise-free depth, intensity and object ids of frame ``i``."""
    K = spec.intrinsics
    cam = spec.camera_poses[i]
    rays = _pixel_rays(K)
    d = rays @ cam.rotation.T  # world directions, scaled so camera z = 1
    o = cam.translation
    if isinstance(spec.background, Room):
        s, a, b = _room_hit(spec.background, o, d)
    else:
        s, a, b = _plane_hit(spec.background, o, d)
    ids = np.where(np.isfinite(s), BACKGROUND, NO_HIT)
    intensity = np.where(np.isfinite(s), spec.texture(a, b), 0.0)
    for k, box in enumerate(spec.movers):
        sk, ak, bk = _box_hit(box, box.pose(i), o, d)
        closer = sk < s
        s = np.where(closer, sk, s)
        ids = np.where(closer, k, ids)
        intensity = np.where(closer, spec.texture(ak, bk, seed_offset=1.0 + k), intensity)
    depth = np.where(np.isfinite(s), s, 0.0)
    return depth, np.where(ids == NO_HIT, 0.0, intensity), ids


def render_sequence(spec: SceneSpec, seed: int = 0) -> SyntheticSequence:
    rng = np.random.default_rng(seed)
    frames, masks, ids_all = [], [], []
    for i in range(spec.n_frames):
        depth, intensity, ids = render_frame(spec, i)
        if spec.noise > 0:
            noisy = depth + rng.normal(0.0, spec.noise, depth.shape)
            depth = np.where(depth > 0, np.maximum(noisy, 1e-6), 0.0)
        frames.append(Frame(spec.timestamp(i), intensity, depth))
        ids_all.append(ids)
        if i == 0:
            masks.append(np.zeros(depth.shape, dtype=bool))
        else:
            moved = [k for k, m in enumerate(spec.movers) if not m.pose(i).allclose(m.pose(i - 1), 1e-12)]
            masks.append(np.isin(ids, moved))
    traj = Trajectory([spec.timestamp(i) for i in range(spec.n_frames)], list(spec.camera_poses))
    return SyntheticSequence(spec, frames, traj, masks, ids_all)


# --- scene builders ---------------------------------------------------------


def default_intrinsics(width: int = 320, height: int = 240) -> Intrinsics:
    """TUM-like pinhole scaled to the requested width."""
    s = width / 640.0
    return Intrinsics(525.0 * s, 525.0 * s, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def camera_path(n: int, step, start: PoseSE3 | None = None) -> tuple:
    """Constant-velocity camera: ``T_k = T_{k-1} exp(step)`` (step in the camera frame)."""
    pose = start or PoseSE3.identity()
    inc = se3_exp(step)
    out = [pose]
    for _ in range(n - 1):
        pose = pose @ inc
        out.append(pose)
    return tuple(out)


def motion_step(translation_m: float = 0.02, rotation_deg: float = 1.0, direction=(1.0, 0.5, 0.3), axis=(0.3, 1.0, 0.2)):
    """A twist whose exponential moves the camera by the given amounts."""
    w = np.asarray(axis, float)
    w = np.deg2rad(rotation_deg) * w / np.linalg.norm(w)
    t = np.asarray(direction, float)
    t = translation_m * t / np.linalg.norm(t)
    # pick v so that exp((v, w)) has translation exactly t
    v = np.linalg.solve(left_jacobian(w), t)
    return np.concatenate([v, w])


def plane_scene(n_frames: int = 2, step=None, intrinsics=None, noise: float = 0.0, tilt_deg: float = 15.0) -> SceneSpec:
    """Textured plane about 2 m in front of a moving camera."""
    K = intrinsics or default_intrinsics()
    step = motion_step() if step is None else step
    a = np.deg2rad(tilt_deg)
    normal = (np.sin(a), 0.3 * np.sin(a), -np.cos(a))
    return SceneSpec(K, camera_path(n_frames, step), Plane((0.0, 0.0, 2.0), normal), noise=noise)


def box_scene(
    n_frames: int = 2,
    step=None,
    box_shift=(0.5, 0.0, 0.0),
    intrinsics=None,
    noise: float = 0.0,
    box_center=(-0.25, 0.0, 1.8),
    box_size=(0.68, 0.63, 0.4),
) -> SceneSpec:
    """A box in front of a plane; the box moves by ``box_shift`` every frame.

    With the default camera the box covers about 15% of the frame.
    """
    K = intrinsics or default_intrinsics()
    step = np.zeros(6) if step is None else step
    c = np.asarray(box_center, float)
    shift = np.asarray(box_shift, float)
    poses = tuple(PoseSE3(np.eye(3), c + k * shift) for k in range(n_frames))
    bg = Plane((0.0, 0.0, 3.2), (0.1, 0.05, -1.0))
    return SceneSpec(K, camera_path(n_frames, step), bg, (Box(tuple(box_size), poses),), noise=noise)


def orbit_scene(n_frames: int = 50, radius: float = 0.4, intrinsics=None, noise: float = 0.0) -> SceneSpec:
    """Camera circling inside a textured room while looking at its far wall."""
    K = intrinsics or default_intrinsics()
    poses = []
    for k in range(n_frames):
        phi = 2 * np.pi * k / n_frames * 0.25
        c = np.array([radius * np.sin(phi), 0.1 * np.sin(2 * phi), radius * (1 - np.cos(phi))])
        yaw = -0.25 * phi
        R = se3_exp([0, 0, 0, 0.05 * np.sin(phi), yaw, 0]).rotation
        poses.append(PoseSE3(R, c))
    return SceneSpec(K, tuple(poses), Room((-2.5, -1.5, -1.5), (2.5, 1.5, 3.0)), noise=noise)


def walking_scene(
    n_frames: int = 20,
    speed: float = 0.1,
    radius: float = 0.3,
    intrinsics=None,
    noise: float = 0.0,
) -> SceneSpec:
    """Orbiting camera in a room while a person-sized box crosses the view.

    The box advances ``speed`` metres per frame along x, a walking person
    filmed at 10 fps; the camera follows the first quarter of
    :func:`orbit_scene`.  Depth-gap pre-elimination only sees boundaries that
    move farther than ``MaskConfig.edge_window`` pixels between frames; at the
    default speed the box edges move about 16 px.
    """
    base = orbit_scene(n_frames, radius, intrinsics, noise)
    start = np.array([-0.6, 0.1, 1.6])
    poses = tuple(PoseSE3(np.eye(3), start + k * np.array([speed, 0.0, 0.0])) for k in range(n_frames))
    return replace(base, movers=(Box((0.45, 1.2, 0.3), poses),), fps=10.0)


# --- scene spec files -------------------------------------------------------


def _floats(value, n, line):
    parts = value.split()
    if len(parts) != n:
        raise FormatError(f"expected {n} numbers, got {len(parts)}", line)
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise FormatError("non-numeric value", line) from None


def parse_scene_spec(text: str) -> SceneSpec:
    """Parse a ``key = value`` scene description.

    Keys: width, height, fx, fy, cx, cy, frames, fps, noise,
    ``background = plane px py pz nx ny nz`` or ``background = room x0 y0 z0 x1 y1 z1``,
    ``texture = wavelength amplitude``, ``camera_start = tx ty tz``,
    ``camera_step = vx vy vz wx wy wz``.  Movers: ``box = cx cy cz sx sy sz``
    adds a box; ``box_step = i dx dy dz`` moves box ``i`` every frame and
    ``box_move = i frame dx dy dz`` displaces it once from ``frame`` on.
    """
    scalars = {}
    background = Plane()
    texture = Texture()
    cam_start = np.zeros(3)
    cam_step = np.zeros(6)
    boxes, steps, moves = [], {}, []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected key = value", n)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("width", "height", "frames"):
            try:
                scalars[key] = int(value)
            except ValueError:
                raise FormatError(f"{key} must be an integer", n) from None
        elif key in ("fx", "fy", "cx", "cy", "fps", "noise"):
            scalars[key] = _floats(value, 1, n)[0]
        elif key == "background":
            kind, _, rest = value.partition(" ")
            nums = _floats(rest, 6, n)
            if kind == "plane":
                background = Plane(tuple(nums[:3]), tuple(nums[3:]))
            elif kind == "room":
                background = Room(tuple(nums[:3]), tuple(nums[3:]))
            else:
                raise FormatError(f"unknown background {kind!r}", n)
        elif key == "texture":
            wl, amp = _floats(value, 2, n)
            texture = Texture(wl, amp)
        elif key == "camera_start":
            cam_start = np.array(_floats(value, 3, n))
        elif key == "camera_step":
            cam_step = np.array(_floats(value, 6, n))
        elif key == "box":
            boxes.append(_floats(value, 6, n))
        elif key == "box_step":
            i, *dxyz = _floats(value, 4, n)
            steps[int(i)] = (np.array(dxyz), n)
        elif key == "box_move":
            i, frame, *dxyz = _floats(value, 5, n)
            moves.append((int(i), int(frame), np.array(dxyz), n))
        else:
            raise FormatError(f"unknown key {key!r}", n)
    width, height = scalars.get("width", 320), scalars.get("height", 240)
    K0 = default_intrinsics(width, height)
    K = replace(
        K0,
        fx=scalars.get("fx", K0.fx),
        fy=scalars.get("fy", K0.fy),
        cx=scalars.get("cx", K0.cx),
        cy=scalars.get("cy", K0.cy),
    )
    n_frames = scalars.get("frames", 2)
    cams = camera_path(n_frames, cam_step, PoseSE3(np.eye(3), cam_start))
    offsets = [np.zeros((n_frames, 3)) for _ in boxes]
    for i, (d, line) in steps.items():
        if not 0 <= i < len(boxes):
            raise FormatError(f"box_step refers to undefined box {i}", line)
        offsets[i] += np.arange(n_frames)[:, None] * d
    for i, frame, d, line in moves:
        if not 0 <= i < len(boxes):
            raise FormatError(f"box_move refers to undefined box {i}", line)
        offsets[i][frame:] += d
    movers = tuple(
        Box(tuple(b[3:]), tuple(PoseSE3(np.eye(3), np.array(b[:3]) + off) for off in offsets[k]))
        for k, b in enumerate(boxes)
    )
    return SceneSpec(
        K, cams, background, movers, noise=scalars.get("noise", 0.0), texture=texture,
        fps=scalars.get("fps", 30.0),
    )


def write_tum_dataset(seq: SyntheticSequence, out_dir) -> Path:
    """Emit rgb/, depth/, masks/, index files, ground truth and camera.txt."""
    out = Path(out_dir)
    for sub in ("rgb", "depth", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    K = seq.spec.intrinsics
    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    for i, frame in enumerate(seq.frames):
        stamp = f"{frame.timestamp:.6f}"
        write_gray_png(out / "rgb" / f"{stamp}.png", frame.intensity)
        write_depth_png(out / "depth" / f"{stamp}.png", frame.depth, K.depth_scale)
        mask = seq.masks[i].astype(np.uint8) * 255
        Image.fromarray(mask).save(out / "masks" / f"{stamp}.png")
        rgb_lines.append(f"{stamp} rgb/{stamp}.png")
        depth_lines.append(f"{stamp} depth/{stamp}.png")
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    write_trajectory(out / "groundtruth.txt", seq.trajectory)
    (out / "camera.txt").write_text(
        "".join(
            f"{k} = {getattr(K, k)!r}\n"
            for k in ("fx", "fy", "cx", "cy", "width", "height", "depth_scale")
        )
    )
    return out
