"""Joint photometric and depth direct alignment over SE(3).

For every static pixel ``x`` of frame A with depth ``d``, the point
``p = backproject(x, d)`` is moved into frame B with the current pose and
reprojected.  Two residuals are read at the reprojection ``x'``::

    r_I = I_B(x') - I_A(x)
    r_D = D_B(x') - (T p)_z

and the pose minimizes ``sum (alpha_I * r_I + r_D)^2`` by Gauss-Newton with
left-multiplicative updates ``T <- exp(delta) T``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import INVALID, Components
from .errors import DegenerateGeometry, InsufficientOverlap, InvalidArgument
from .geometry import Intrinsics, PoseSE3, se3_exp
from .imaging import Frame, bilinear_stencil, downsample, interpolate
from .motion_mask import DYNAMIC, MASK_INVALID, STATIC

log = logging.getLogger(__name__)

MIN_RESIDUALS = 200
CHUNK = 4096


@dataclass(frozen=True)
class AlignmentConfig:
    alpha_i: float = 10.0
    pyramid_levels: int = 3
    max_gn_iters: int = 20
    update_norm_tol: float = 1e-6
    huber_delta: float = 0.3  # combined residual units: 0.03 intensity at alpha_i = 10
    outlier_kappa: float = 5.0
    # residuals below this never count as outliers, whatever the spread
    outlier_floor: float = 0.2
    # B observing a surface this much closer than the warped point means occlusion
    occlusion_tol: float = 0.1
    # bilinear cells of B whose depths span more than this straddle an edge
    depth_jump: float = 0.1
    min_residuals: int = MIN_RESIDUALS
    max_condition: float = 1e12
    max_step_halvings: int = 5

    def __post_init__(self):
        if not self.alpha_i > 0:
            raise InvalidArgument("alpha_i must be positive")
        if self.pyramid_levels < 1:
            raise InvalidArgument("pyramid_levels must be at least 1")
        for name in ("update_norm_tol", "huber_delta", "outlier_kappa", "occlusion_tol", "depth_jump"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Residuals of the static pixels of frame A under one pose."""

    v: np.ndarray
    u: np.ndarray
    r_i: np.ndarray
    r_d: np.ndarray
    valid: np.ndarray
    alpha_i: float
    shape: tuple

    @property
    def combined(self) -> np.ndarray:
        return np.where(self.valid, self.alpha_i * self.r_i + self.r_d, 0.0)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_invalid(self) -> int:
        return int(self.valid.size - self.valid.sum())

    @property
    def objective(self) -> float:
        r = self.combined[self.valid]
        return float(r @ r)

    def as_image(self, which: str = "combined") -> np.ndarray:
        """Residual scattered back to an (H, W) array, NaN where absent."""
        img = np.full(self.shape, np.nan)
        vals = {"combined": self.combined, "intensity": self.r_i, "depth": self.r_d}[which]
        img[self.v[self.valid], self.u[self.valid]] = vals[self.valid]
        return img


@dataclass(frozen=True)
class AlignStats:
    rows: list = field(default_factory=list)  # (level, iter, objective, step_norm, n_valid, mean_huber)

    @property
    def iterations(self) -> int:
        return len(self.rows)


class _Level:
    """Precomputed per-pyramid-level data of frame A."""

    def __init__(self, frameA: Frame, frameB: Frame, mask: np.ndarray, K: Intrinsics):
        self.K = K
        self.frameB = frameB
        self.shape = frameA.shape
        use = (mask == STATIC) & (frameA.depth > 0)
        self.v, self.u = np.nonzero(use)
        d = frameA.depth[self.v, self.u]
        self.points = np.stack(
            [(self.u - K.cx) * d / K.fx, (self.v - K.cy) * d / K.fy, d], axis=1
        )
        self.i_a = frameA.intensity[self.v, self.u]
        d = frameB.depth
        cells = np.stack([d[:-1, :-1], d[:-1, 1:], d[1:, :-1], d[1:, 1:]])
        # usable bilinear depth cells: fully measured and not straddling an edge
        self.cell_span = cells.max(axis=0) - cells.min(axis=0)
        self.cell_measured = cells.min(axis=0) > 0

    def linearize(self, pose: PoseSE3, cfg: AlignmentConfig, jacobian: bool):
        K = self.K
        q = self.points @ pose.rotation.T + pose.translation
        z = q[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        u = K.fx * q[:, 0] / zs + K.cx
        v = K.fy * q[:, 1] / zs + K.cy
        st = bilinear_stencil(self.shape, u, v)
        ib, _, gix, giy = interpolate(self.frameB.intensity, st)
        db, _, gdx, gdy = interpolate(self.frameB.depth, st)
        cell = st.cell
        ok = st.inside & front
        ok &= self.cell_measured.reshape(-1)[cell] & (self.cell_span.reshape(-1)[cell] <= cfg.depth_jump)
        r_i = ib - self.i_a
        r_d = db - z
        valid = ok & (r_d > -cfg.occlusion_tol)
        r_i = np.where(valid, r_i, 0.0)
        r_d = np.where(valid, r_d, 0.0)
        if not jacobian:
            return r_i, r_d, valid, None
        a = cfg.alpha_i
        gx = a * gix + gdx
        gy = a * giy + gdy
        inv_z = 1.0 / zs
        # d(combined)/dq through the projection, minus d(q_z)/dq
        g = np.empty_like(q)
        g[:, 0] = gx * K.fx * inv_z
        g[:, 1] = gy * K.fy * inv_z
        g[:, 2] = -(gx * K.fx * q[:, 0] + gy * K.fy * q[:, 1]) * inv_z**2 - 1.0
        J = np.empty((len(q), 6))
        J[:, :3] = g
        # q x g
        J[:, 3] = q[:, 1] * g[:, 2] - q[:, 2] * g[:, 1]
        J[:, 4] = q[:, 2] * g[:, 0] - q[:, 0] * g[:, 2]
        J[:, 5] = q[:, 0] * g[:, 1] - q[:, 1] * g[:, 0]
        J[~valid] = 0.0
        return r_i, r_d, valid, J


def _mask_for_level(mask: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [mask]
    for _ in range(levels - 1):
        m = out[-1]
        h, w = m.shape
        m = m[: h - h % 2, : w - w % 2]
        blocks = np.stack([m[0::2, 0::2], m[0::2, 1::2], m[1::2, 0::2], m[1::2, 1::2]])
        coarse = np.where(np.all(blocks == STATIC, axis=0), STATIC, DYNAMIC).astype(np.uint8)
        coarse[np.all(blocks == MASK_INVALID, axis=0)] = MASK_INVALID
        out.append(coarse)
    return out


def _check_inputs(frameA: Frame, frameB: Frame, mask: np.ndarray, K: Intrinsics):
    if frameA.shape != frameB.shape:
        raise InvalidArgument("frames must have equal dimensions")
    if mask.shape != frameA.shape:
        raise InvalidArgument(f"mask {mask.shape} does not match frames {frameA.shape}")
    if (K.height, K.width) != frameA.shape:
        raise InvalidArgument("intrinsics do not match the frame size")


def residuals(
    frameA: Frame,
    frameB: Frame,
    pose: PoseSE3,
    mask: np.ndarray,
    K: Intrinsics,
    cfg: AlignmentConfig = AlignmentConfig(),
    check_overlap: bool = True,
) -> ResidualSet:
    """Photometric and depth residuals of every STATIC, depth-valid pixel of A.

    A residual is invalid when its warp leaves the frame, lands behind the
    camera, touches missing depth in B, or is occluded in B.
    """
    _check_inputs(frameA, frameB, mask, K)
    lvl = _Level(frameA, frameB, mask, K)
    r_i, r_d, valid, _ = lvl.linearize(pose, cfg, jacobian=False)
    rset = ResidualSet(lvl.v, lvl.u, r_i, r_d, valid, cfg.alpha_i, frameA.shape)
    if check_overlap and rset.n_valid < cfg.min_residuals:
        raise InsufficientOverlap(f"only {rset.n_valid} valid residuals", pose)
    return rset


def huber_weights(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def huber_cost(r: np.ndarray, delta: float) -> float:
    a = np.abs(r)
    return float(np.sum(np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))))


def _normal_equations(J, r, w):
    H = np.zeros((6, 6))
    b = np.zeros(6)
    # fixed-size partial sums merged in index order keep runs bit-reproducible
    for s in range(0, len(r), CHUNK):
        Jc, rc, wc = J[s : s + CHUNK], r[s : s + CHUNK], w[s : s + CHUNK]
        Jw = Jc * wc[:, None]
        H += Jw.T @ Jc
        b += Jw.T @ rc
    return H, b


def _mean_huber(r, valid, delta):
    n = int(valid.sum())
    return huber_cost(r[valid], delta) / max(n, 1), n


def _align_level(lvl: _Level, pose: PoseSE3, cfg: AlignmentConfig, level: int, stats: AlignStats):
    a = cfg.alpha_i
    r_i, r_d, valid, J = lvl.linearize(pose, cfg, jacobian=True)
    r = a * r_i + r_d
    cost, n = _mean_huber(r, valid, cfg.huber_delta)
    if n < cfg.min_residuals:
        raise InsufficientOverlap(f"level {level}: only {n} valid residuals", pose)
    for it in range(cfg.max_gn_iters):
        w = np.where(valid, huber_weights(r, cfg.huber_delta), 0.0)
        H, b = _normal_equations(J, r, w)
        cond = np.linalg.cond(H)
        if not np.isfinite(cond) or cond > cfg.max_condition:
            raise DegenerateGeometry(f"level {level}: normal matrix condition {cond:.3g}", pose)
        delta = -np.linalg.solve(H, b)
        step = float(np.linalg.norm(delta))
        if step < cfg.update_norm_tol:
            stats.rows.append((level, it, float(r[valid] @ r[valid]), step, n, cost))
            return pose
        accepted = False
        for _ in range(cfg.max_step_halvings + 1):
            cand = se3_exp(delta) @ pose
            ci, cd, cv, cJ = lvl.linearize(cand, cfg, jacobian=True)
            cr = a * ci + cd
            ccost, cn = _mean_huber(cr, cv, cfg.huber_delta)
            if cn >= cfg.min_residuals and ccost <= cost:
                accepted = True
                break
            delta = 0.5 * delta
        if not accepted:
            stats.rows.append((level, it, float(r[valid] @ r[valid]), 0.0, n, cost))
            return pose
        pose, r, valid, J, cost, n = cand, cr, cv, cJ, ccost, cn
        stats.rows.append((level, it, float(r[valid] @ r[valid]), float(np.linalg.norm(delta)), n, cost))
        if np.linalg.norm(delta) < cfg.update_norm_tol:
            break
    return pose


def gauss_newton_align(
    frameA: Frame,
    frameB: Frame,
    init: PoseSE3,
    mask: np.ndarray,
    K: Intrinsics,
    cfg: AlignmentConfig = AlignmentConfig(),
):
    """Coarse-to-fine robust Gauss-Newton on the joint residual.

    Returns ``(pose, residual_set, stats)`` where the residual set is
    evaluated at full resolution under the final pose.  Each accepted step
    does not increase the mean Huber cost; a step is halved up to
    ``max_step_halvings`` times before the level gives up.
    """
    _check_inputs(frameA, frameB, mask, K)
    frames_a, frames_b, intr = [frameA], [frameB], [K]
    for _ in range(cfg.pyramid_levels - 1):
        frames_a.append(downsample(frames_a[-1]))
        frames_b.append(downsample(frames_b[-1]))
        intr.append(K.scaled(len(intr)))
    masks = _mask_for_level(mask, cfg.pyramid_levels)
    stats = AlignStats()
    pose = init
    for level in reversed(range(cfg.pyramid_levels)):
        lvl = _Level(frames_a[level], frames_b[level], masks[level], intr[level])
        if len(lvl.v) < cfg.min_residuals and level > 0:
            log.debug("skipping level %d: %d candidate pixels", level, len(lvl.v))
            continue
        pose = _align_level(lvl, pose, cfg, level, stats)
    rset = residuals(frameA, frameB, pose, mask, K, cfg)
    return pose, rset, stats


def reject_outliers(
    rset: ResidualSet,
    mask: np.ndarray,
    cfg: AlignmentConfig = AlignmentConfig(),
    components: Components | None = None,
) -> np.ndarray:
    """Flip STATIC pixels with large combined residual to DYNAMIC.

    Threshold is ``median + outlier_kappa * MAD`` of ``|alpha_I r_I + r_D|``
    over valid residuals, never below ``outlier_floor``.  With
    ``components``, every connected depth component whose members are
    mostly DYNAMIC afterwards becomes DYNAMIC as a whole.  Nothing flips
    back to STATIC.
    """
    out = mask.copy()
    mag = np.abs(rset.combined[rset.valid])
    if mag.size:
        med = float(np.median(mag))
        mad = float(np.median(np.abs(mag - med)))
        threshold = max(med + cfg.outlier_kappa * mad, cfg.outlier_floor)
        hit = rset.valid & (np.abs(rset.combined) > threshold)
        vv, uu = rset.v[hit], rset.u[hit]
        flip = out[vv, uu] == STATIC
        out[vv[flip], uu[flip]] = DYNAMIC
    if components is not None and len(components):
        lab = components.labels
        member = lab != INVALID
        dyn = np.bincount(lab[member & (out == DYNAMIC)], minlength=len(components))
        majority = dyn * 2 > components.sizes
        whole = member & majority[np.where(member, lab, 0)] & (out == STATIC)
        out[whole] = DYNAMIC
    return out
