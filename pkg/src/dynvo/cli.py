"""Command-line interface: ``dynvo run | segment | eval | synth``.

Settings come from flat ``key = value`` files; command-line flags override
the file, which overrides the defaults.  Exit status is 0 on success, 2 when
some frame pairs fell back to the previous motion, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import synth
from .alignment import AlignmentConfig
from .dataset_io import (
    TUM_DEFAULT,
    format_trajectory,
    load_tum,
    parse_trajectory,
    read_trajectory,
)
from .errors import DynVOError, FormatError, InvalidArgument
from .evaluation import absolute_trajectory_error, errors_csv, relative_pose_error, reports_csv
from .geometry import Intrinsics
from .imaging import load_frame
from .motion_mask import DYNAMIC, MaskConfig, mask_to_png_values
from .refine import MAX_REFINE_ITERS, PipelineConfig, process_pair, run_sequence

log = logging.getLogger("dynvo")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    # alignment
    alpha_i: float = AlignmentConfig.alpha_i
    pyramid_levels: int = AlignmentConfig.pyramid_levels
    max_gn_iters: int = AlignmentConfig.max_gn_iters
    update_norm_tol: float = AlignmentConfig.update_norm_tol
    huber_delta: float = AlignmentConfig.huber_delta
    outlier_kappa: float = AlignmentConfig.outlier_kappa
    outlier_floor: float = AlignmentConfig.outlier_floor
    occlusion_tol: float = AlignmentConfig.occlusion_tol
    depth_jump: float = AlignmentConfig.depth_jump
    min_residuals: int = AlignmentConfig.min_residuals
    max_condition: float = AlignmentConfig.max_condition
    max_step_halvings: int = AlignmentConfig.max_step_halvings
    # motion mask
    block_size: int = MaskConfig.block
    tau_abs: float = MaskConfig.tau_abs
    tau_rel: float = MaskConfig.tau_rel
    mask_threshold: float = MaskConfig.threshold
    edge_window: int = MaskConfig.edge_window
    # refinement and sequence
    max_refine_iters: int = MAX_REFINE_ITERS
    change_tol: float = PipelineConfig.change_tol
    max_clusters: int = PipelineConfig.max_clusters
    warm_start: bool = True
    # data
    max_dt: float = 0.02
    depth_scale: float = 5000.0
    max_frames: int = 0  # 0 = all
    fx: float = 0.0  # 0 = from camera.txt or the sequence name
    fy: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    # evaluation
    delta: float = 1.0
    # misc
    seed: int = 0
    debug_masks: bool = False

    def __post_init__(self):
        if not 1 <= self.max_refine_iters <= MAX_REFINE_ITERS:
            raise InvalidArgument(f"max_refine_iters must be in [1, {MAX_REFINE_ITERS}]")
        if self.max_frames < 0:
            raise InvalidArgument("max_frames must be non-negative")

    def pipeline(self) -> PipelineConfig:
        align = AlignmentConfig(**{f.name: getattr(self, f.name) for f in fields(AlignmentConfig)})
        mask = MaskConfig(
            block=self.block_size, tau_abs=self.tau_abs, tau_rel=self.tau_rel,
            threshold=self.mask_threshold, edge_window=self.edge_window,
        )
        return PipelineConfig(
            align, mask, self.max_refine_iters, self.change_tol, self.max_clusters,
            self.seed, self.warm_start,
        )

    def intrinsics_override(self, width: int, height: int) -> Intrinsics | None:
        if not (self.fx and self.fy):
            return None
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, width, height, self.depth_scale)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(kind, text: str, line=None):
    try:
        if kind in (bool, "bool"):
            t = text.strip().lower()
            if t in _TRUE:
                return True
            if t in _FALSE:
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        return float(text)
    except ValueError:
        raise FormatError(f"bad value {text!r}", line) from None


def parse_config(text: str) -> dict:
    """``key = value`` lines to a dict of typed RunConfig overrides."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected key = value", n)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise FormatError(f"unknown key {key!r}", n)
        out[key] = _convert(types[key], value, n)
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise InvalidArgument(f"cannot read config {path}: {e}") from e
        values.update(parse_config(text))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


# --- commands ---------------------------------------------------------------


def _stats_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", "timestamp", "fallback", "iterations", "objective", "change_fraction",
                "dynamic_pixels", "pre_dynamic_pixels"])
    w.writerows(rows)
    return buf.getvalue()


def cmd_run(dataset, cfg: RunConfig, out_dir) -> int:
    """Track a TUM-layout sequence and write its trajectory and statistics."""
    seq = load_tum(dataset, cfg.max_dt, depth_scale=cfg.depth_scale)
    K = seq.intrinsics
    n = len(seq) if cfg.max_frames == 0 else min(cfg.max_frames, len(seq))
    if n < 2:
        raise InvalidArgument(f"need at least 2 frames, found {n}")
    first = seq.frame(0)
    h, w = first.shape
    K = cfg.intrinsics_override(w, h) or replace(K, width=w, height=h)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mask_dir = out / "masks"
    if cfg.debug_masks:
        mask_dir.mkdir(exist_ok=True)
    rows = []
    stamps = seq.timestamps[:n]

    def on_pair(i, res):
        if res is None:
            rows.append([i, repr(float(stamps[i])), 1, 0, "", "", "", ""])
            return
        rows.append([
            i, repr(float(stamps[i])), 0, res.iterations, repr(res.objectives[-1]),
            repr(res.change_fractions[-1]), int(np.count_nonzero(res.mask == DYNAMIC)),
            int(np.count_nonzero(res.initial_mask == DYNAMIC)),
        ])
        if cfg.debug_masks:
            # the mask belongs to the first frame of the pair
            name = f"{stamps[i - 1]:.6f}.png"
            Image.fromarray(mask_to_png_values(res.mask)).save(mask_dir / name)
        log.info("pair %d/%d: %d iterations", i, n - 1, res.iterations)

    result = run_sequence(seq.frames(0, n), K, cfg.pipeline(), on_pair, keep_pairs=False)
    text = format_trajectory(result.trajectory)
    (out / "trajectory.txt").write_text(text)
    (out / "stats.csv").write_text(_stats_csv(rows))
    if seq.groundtruth is not None:
        # evaluate exactly what was written, so ``dynvo eval`` agrees bit for bit
        est = parse_trajectory(text)
        reports = [absolute_trajectory_error(seq.groundtruth, est)]
        try:
            reports.insert(0, relative_pose_error(seq.groundtruth, est, cfg.delta))
        except DynVOError as e:
            log.warning("relative pose error skipped: %s", e)
        (out / "metrics.csv").write_text(reports_csv(reports))
    if result.fallback:
        log.warning("%d pair(s) fell back to the previous motion: %s", len(result.fallback), result.fallback)
        return EXIT_PARTIAL
    return EXIT_OK


def _default_intrinsics(width: int, height: int, depth_scale: float) -> Intrinsics:
    if (width, height) == (640, 480):
        return Intrinsics(width=width, height=height, depth_scale=depth_scale, **TUM_DEFAULT)
    f = TUM_DEFAULT["fx"] * width / 640.0
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, depth_scale)


def cmd_segment(rgb_a, depth_a, rgb_b, depth_b, cfg: RunConfig, out_dir) -> int:
    """Motion mask of frame A: pre-elimination plus one align/reject round."""
    A = load_frame(rgb_a, depth_a, 0.0, cfg.depth_scale)
    B = load_frame(rgb_b, depth_b, 1.0, cfg.depth_scale)
    if A.shape != B.shape:
        raise InvalidArgument(f"frame sizes differ: {A.shape} vs {B.shape}")
    h, w = A.shape
    K = cfg.intrinsics_override(w, h) or _default_intrinsics(w, h, cfg.depth_scale)
    res = process_pair(A, B, K, cfg=replace(cfg.pipeline(), max_refine_iters=1))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask_to_png_values(res.mask)).save(out / "mask.png")
    Image.fromarray(mask_to_png_values(res.initial_mask)).save(out / "pre_mask.png")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["region", "coefficient", "triggered", "cluster"])
    triggered = set(res.pre.triggered.tolist())
    for r, c in enumerate(res.pre.coefficients):
        wr.writerow([r, repr(float(c)), int(r in triggered), res.pre.blamed.get(r, "")])
    (out / "coefficients.csv").write_text(buf.getvalue())
    return EXIT_OK


def cmd_eval(gt_path, est_path, mode: str = "rpe", delta: float = 1.0, per_frame: bool = False,
             rotation: bool = False, series=None, stream=None) -> int:
    """Print RPE or ATE of an estimate as CSV."""
    stream = stream or sys.stdout
    gt, est = read_trajectory(gt_path), read_trajectory(est_path)
    if mode == "rpe":
        report = relative_pose_error(gt, est, delta, per_frame=per_frame)
    elif mode == "ate":
        report = absolute_trajectory_error(gt, est, rotation=rotation)
    else:
        raise InvalidArgument(f"unknown mode {mode!r}")
    stream.write(reports_csv([report]))
    if series is not None:
        Path(series).write_text(errors_csv(report))
    return EXIT_OK


def cmd_synth(spec_path, out_dir, seed: int = 0) -> int:
    """Render a scene description into a TUM-layout dataset."""
    try:
        text = Path(spec_path).read_text()
    except OSError as e:
        raise InvalidArgument(f"cannot read scene {spec_path}: {e}") from e
    spec = synth.parse_scene_spec(text)
    synth.write_tum_dataset(synth.render_sequence(spec, seed), out_dir)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


def _add_pipeline_flags(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--block-size", type=int)
    p.add_argument("--alpha-i", type=float)
    p.add_argument("--pyramid-levels", type=int)
    p.add_argument("--max-refine-iters", type=int, help=f"at most {MAX_REFINE_ITERS}")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynvo", description="RGB-D odometry for scenes with moving objects")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="track a TUM-layout sequence")
    run.add_argument("dataset")
    _add_pipeline_flags(run)
    run.add_argument("--delta", type=float, help="RPE step in seconds for metrics.csv")
    run.add_argument("--debug-masks", action="store_const", const=True, help="write per-frame mask PNGs")

    seg = sub.add_parser("segment", help="motion mask of one frame pair")
    for name in ("rgb_a", "depth_a", "rgb_b", "depth_b"):
        seg.add_argument(name)
    _add_pipeline_flags(seg)

    ev = sub.add_parser("eval", help="RPE or ATE of a trajectory, CSV on stdout")
    ev.add_argument("groundtruth")
    ev.add_argument("estimate")
    ev.add_argument("--mode", choices=("rpe", "ate"), default="rpe")
    ev.add_argument("--delta", type=float, default=1.0, help="RPE step, seconds (frames with --per-frame)")
    ev.add_argument("--per-frame", action="store_true")
    ev.add_argument("--rotation", action="store_true", help="add rotational ATE")
    ev.add_argument("--series", help="also write the per-pose error series to this CSV")

    syn = sub.add_parser("synth", help="render a synthetic TUM-layout dataset")
    syn.add_argument("scene", help="scene description file")
    syn.add_argument("--out", required=True)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args) -> RunConfig:
    keys = ("seed", "block_size", "alpha_i", "pyramid_levels", "max_refine_iters", "delta", "debug_masks")
    return load_config(args.config, {k: getattr(args, k, None) for k in keys})


def _setup_logging():
    level = os.environ.get("DYNVO_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.dataset, _config_from_args(args), args.out)
        if args.command == "segment":
            return cmd_segment(args.rgb_a, args.depth_a, args.rgb_b, args.depth_b, _config_from_args(args), args.out)
        if args.command == "eval":
            return cmd_eval(args.groundtruth, args.estimate, args.mode, args.delta, args.per_frame,
                            args.rotation, args.series)
        return cmd_synth(args.scene, args.out, args.seed)
    except (DynVOError, OSError) as e:
        print(f"dynvo {args.command}: error: {e}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
