"""Image containers and low-level image operations.

Images are plain ``(H, W)`` float64 arrays indexed ``[v, u]``.  Intensity
lives in [0, 1]; depth is in meters with 0 marking a missing measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidArgument

LUMA = np.array([0.299, 0.587, 0.114])
MAX_DEPTH = 100.0


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp: float
    intensity: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        intensity = np.asarray(self.intensity, dtype=float)
        depth = np.asarray(self.depth, dtype=float)
        if intensity.ndim != 2 or intensity.shape != depth.shape:
            raise InvalidArgument(
                f"intensity {intensity.shape} and depth {depth.shape} must be matching 2-D arrays"
            )
        if not np.isfinite(self.timestamp):
            raise InvalidArgument("timestamp must be finite")
        if not np.all(np.isfinite(intensity)):
            raise InvalidArgument("intensity must be finite")
        if intensity.min(initial=0.0) < 0.0 or intensity.max(initial=0.0) > 1.0:
            raise InvalidArgument("intensity must lie in [0, 1]")
        if not np.all(np.isfinite(depth)) or depth.min(initial=0.0) < 0.0:
            raise InvalidArgument("depth must be finite and non-negative")
        if depth.max(initial=0.0) >= MAX_DEPTH:
            raise InvalidArgument(f"depth must be below {MAX_DEPTH} m")
        intensity.flags.writeable = False
        depth.flags.writeable = False
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self):
        return self.intensity.shape

    def with_depth(self, depth) -> "Frame":
        return Frame(self.timestamp, self.intensity, depth)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB (H, W, 3) to intensity in [0, 1]."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim == 2:
        return rgb / 255.0
    return np.clip(rgb[..., :3] @ LUMA / 255.0, 0.0, 1.0)


def read_intensity(path) -> np.ndarray:
    with Image.open(path) as im:
        return rgb_to_gray(np.asarray(im.convert("RGB")))


def read_depth(path, depth_scale: float = 5000.0) -> np.ndarray:
    """16-bit depth PNG to meters."""
    with Image.open(path) as im:
        raw = np.asarray(im, dtype=np.float64)
    if raw.ndim != 2:
        raise InvalidArgument(f"{path}: depth image must be single channel")
    return raw / depth_scale


def load_frame(rgb_path, depth_path, timestamp: float, depth_scale: float = 5000.0) -> Frame:
    return Frame(timestamp, read_intensity(rgb_path), read_depth(depth_path, depth_scale))


def write_gray_png(path, image: np.ndarray):
    """Store an intensity image as 8-bit RGB (gray replicated)."""
    g = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.repeat(g[..., None], 3, axis=2), mode="RGB").save(Path(path))


def write_depth_png(path, depth: np.ndarray, depth_scale: float = 5000.0):
    raw = np.clip(np.round(np.asarray(depth) * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(Path(path))


# --- hole filling -----------------------------------------------------------


def _fill_rows(depth: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    valid = depth > 0
    cols = np.broadcast_to(np.arange(w), (h, w))
    # index of the nearest valid pixel at or to the right of each column
    right = np.where(valid, cols, w)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]
    left = np.where(valid, cols, -1)
    left = np.maximum.accumulate(left, axis=1)
    src = np.where(right < w, right, left)
    rows = np.arange(h)[:, None]
    filled = depth[rows, np.clip(src, 0, w - 1)]
    return np.where(src >= 0, filled, 0.0)


def fill_depth_holes(depth: np.ndarray) -> np.ndarray:
    """Fill zero-depth pixels from their right neighbor, then close.

    Each zero takes the nearest nonzero value to its right in the same row;
    trailing zeros fall back to the nearest nonzero value on the left.  Rows
    without any measurement stay zero.  A 3x3 grey closing is then applied
    to each band of measured rows separately so empty rows neither bleed
    into nor get filled from their neighbors.
    """
    depth = np.asarray(depth, dtype=float)
    filled = _fill_rows(depth)
    empty_rows = ~np.any(filled > 0, axis=1)
    out = filled.copy()
    start = None
    for r in range(len(empty_rows) + 1):
        if r < len(empty_rows) and not empty_rows[r]:
            if start is None:
                start = r
            continue
        if start is not None:
            out[start:r] = ndimage.grey_closing(filled[start:r], size=(3, 3), mode="reflect")
            start = None
    return out


# --- sampling and derivatives -----------------------------------------------


class Stencil(NamedTuple):
    """Bilinear cell lookup shared by every image sampled at the same points."""

    inside: np.ndarray
    i00: np.ndarray  # flat indices of the four cell corners
    i01: np.ndarray
    i10: np.ndarray
    i11: np.ndarray
    cell: np.ndarray  # flat index of the cell in an (h-1, w-1) grid
    a: np.ndarray  # fractional offsets along u and v
    b: np.ndarray


def bilinear_stencil(shape, u, v) -> Stencil:
    h, w = shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    # the last row/column reuse the cell to their upper-left with weight 1
    u0 = np.minimum(np.floor(uc).astype(np.intp), max(w - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.intp), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    return Stencil(
        inside, v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1,
        v0 * max(w - 1, 1) + u0, uc - u0, vc - v0,
    )


def interpolate(img: np.ndarray, st: Stencil, depth: bool = False):
    """``(value, valid, d/du, d/dv)`` of the bilinear interpolant at a stencil."""
    flat = img.reshape(-1)
    p00, p01, p10, p11 = flat[st.i00], flat[st.i01], flat[st.i10], flat[st.i11]
    top = p00 + st.a * (p01 - p00)
    bot = p10 + st.a * (p11 - p10)
    value = top + st.b * (bot - top)
    du = (1.0 - st.b) * (p01 - p00) + st.b * (p11 - p10)
    dv = bot - top
    valid = st.inside
    if depth:
        valid = valid & (p00 > 0) & (p01 > 0) & (p10 > 0) & (p11 > 0)
    return np.where(valid, value, 0.0), valid, du, dv


def sample_bilinear(img: np.ndarray, u, v, depth: bool = False):
    """Bilinear lookup at continuous pixel coordinates.

    Returns ``(value, valid)``.  A sample is invalid when it falls outside
    the image or, with ``depth=True``, when any of its four neighbors is 0.
    Works on scalars or arrays of coordinates.
    """
    value, valid, _, _ = sample_bilinear_grad(img, u, v, depth=depth)
    return value, valid


def sample_bilinear_grad(img: np.ndarray, u, v, depth: bool = False):
    """Bilinear lookup plus the exact partial derivatives of the interpolant.

    Returns ``(value, valid, d/du, d/dv)``.
    """
    img = np.asarray(img, dtype=float)
    value, valid, du, dv = interpolate(img, bilinear_stencil(img.shape, u, v), depth)
    if np.ndim(value) == 0:
        return float(value), bool(valid), float(du), float(dv)
    return value, valid, du, dv


def gradient(img: np.ndarray):
    """Central-difference image gradient ``(gx, gy)``; one-sided at borders."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 3:
        raise InvalidArgument("gradient needs an image of at least 3x3")
    gy, gx = np.gradient(img)
    return gx, gy


# --- pyramids ---------------------------------------------------------------


def downsample_intensity(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def downsample_depth(depth: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    d = depth[: h - h % 2, : w - w % 2]
    blocks = np.stack([d[0::2, 0::2], d[0::2, 1::2], d[1::2, 0::2], d[1::2, 1::2]])
    n = (blocks > 0).sum(axis=0)
    total = blocks.sum(axis=0)
    return np.where(n > 0, total / np.maximum(n, 1), 0.0)


def downsample(frame: Frame) -> Frame:
    return Frame(frame.timestamp, downsample_intensity(frame.intensity), downsample_depth(frame.depth))


def pyramid(frame: Frame, levels: int) -> list[Frame]:
    """``levels`` frames, finest first."""
    out = [frame]
    for _ in range(levels - 1):
        out.append(downsample(out[-1]))
    return out
