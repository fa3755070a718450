"""Pinhole camera model and SE(3) machinery.

Twists are ordered ``(v, w)``: three translational components followed by
three rotational ones.  Poses map points from one camera frame to another,
``p_b = R @ p_a + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidArgument, InvalidDepth

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9
# drift beyond this is a caller bug, not accumulated round-off
REJECT_TOL = 1e-4


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgument("principal point outside the image")
        if not self.depth_scale > 0:
            raise InvalidArgument("depth_scale must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, levels: int = 1) -> "Intrinsics":
        """Intrinsics of an image downsampled ``levels`` times by 2x2 averaging.

        Pixel centers sit on integer coordinates, so a 2x2 block centered at
        ``(2i + 0.5)`` becomes pixel ``i``.
        """
        fx, fy, cx, cy = self.fx, self.fy, self.cx, self.cy
        w, h = self.width, self.height
        for _ in range(levels):
            fx, fy = fx / 2, fy / 2
            cx, cy = (cx + 0.5) / 2 - 0.5, (cy + 0.5) / 2 - 0.5
            w, h = w // 2, h // 2
        return Intrinsics(fx, fy, max(cx, 0.0), max(cy, 0.0), w, h, self.depth_scale)


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def orthonormality_defect(R: np.ndarray) -> float:
    return float(max(np.abs(R.T @ R - np.eye(3)).max(), abs(np.linalg.det(R) - 1.0)))


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform; immutable."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidArgument("pose entries must be finite")
        defect = orthonormality_defect(R)
        if defect > REJECT_TOL:
            raise InvalidArgument(f"rotation is not a proper rotation (defect {defect:.2e})")
        if defect > ORTHO_TOL:
            R = orthonormalize(R)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """``self ∘ other``: apply ``other`` first."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        s = np.linalg.norm(_vee_antisym(self.rotation)) / 2.0
        return float(np.arctan2(s, c))

    def allclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self):
        w = so3_log(self.rotation)
        return f"PoseSE3(t={np.array2string(self.translation, precision=5)}, w={np.array2string(w, precision=5)})"


def _vee_antisym(R):
    return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W @ W
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W @ W


def so3_log(R) -> np.ndarray:
    """Rotation vector with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    c = (np.trace(R) - 1.0) / 2.0
    v = _vee_antisym(R)
    s = np.linalg.norm(v) / 2.0
    theta = np.arctan2(s, c)
    if theta < SMALL_ANGLE:
        # R ~ I + W
        return 0.5 * v
    if c > 0.0:
        return theta / (2.0 * s) * v
    # Near pi the antisymmetric part vanishes; read the axis from the
    # symmetric part (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T.
    S = (R + R.T) / 2.0 - c * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(S[k, k])
    axis /= np.linalg.norm(axis)
    if axis @ v < 0.0:
        axis = -axis
    return theta * axis


def left_jacobian(w):
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    b = (1.0 - np.cos(theta)) / theta**2
    c = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + b * W + c * W @ W


def left_jacobian_inv(w):
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    half = theta / 2.0
    coef = (1.0 - half / np.tan(half)) / theta**2
    return np.eye(3) - 0.5 * W + coef * W @ W


def se3_exp(twist) -> PoseSE3:
    xi = np.asarray(twist, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise InvalidArgument("twist must be finite")
    v, w = xi[:3], xi[3:]
    return PoseSE3(so3_exp(w), left_jacobian(w) @ v)


def se3_log(pose: PoseSE3) -> np.ndarray:
    w = so3_log(pose.rotation)
    v = left_jacobian_inv(w) @ pose.translation
    return np.concatenate([v, w])


# --- camera model -----------------------------------------------------------


def backproject(K: Intrinsics, pixel, depth: float) -> np.ndarray:
    u, v = pixel
    if not depth > 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, float(depth)])


def in_frame(K: Intrinsics, u, v):
    return (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)


def project(K: Intrinsics, point) -> tuple[float, float, bool]:
    """Continuous pixel coordinates of ``point`` plus an in-frame flag."""
    x, y, z = point
    if not z > 0:
        raise BehindCamera(f"point has z = {z}")
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    return u, v, bool(in_frame(K, u, v))


def warp_pixel(K: Intrinsics, pose: PoseSE3, pixel, depth: float) -> tuple[float, float, bool]:
    return project(K, pose.apply(backproject(K, pixel, depth)))


def backproject_image(K: Intrinsics, depth: np.ndarray) -> np.ndarray:
    """(H, W, 3) camera-frame points; rows with zero depth give zero points."""
    h, w = depth.shape
    u = np.arange(w, dtype=float)[None, :]
    v = np.arange(h, dtype=float)[:, None]
    return np.stack(
        [(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth.astype(float)], axis=-1
    )


def project_points(K: Intrinsics, points: np.ndarray):
    """Vectorized projection of (N, 3) points.

    Returns ``(u, v, ok)``; ``ok`` is False for points behind the camera or
    outside the frame.  Coordinates of points behind the camera are NaN.
    """
    z = points[:, 2]
    front = z > 0
    zs = np.where(front, z, np.nan)
    u = K.fx * points[:, 0] / zs + K.cx
    v = K.fy * points[:, 1] / zs + K.cy
    ok = front & in_frame(K, np.nan_to_num(u, nan=-1.0), np.nan_to_num(v, nan=-1.0))
    return u, v, ok
