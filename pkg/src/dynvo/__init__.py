"""Direct RGB-D visual odometry for indoor scenes with moving objects.

Frame pairs are aligned by minimizing joint photometric and depth error;
moving objects are removed first from depth-gap changes across depth-cluster
boundaries and then from residual outliers.
"""

from .alignment import AlignmentConfig, gauss_newton_align, reject_outliers, residuals
from .clustering import cluster_depth, connected_components
from .dataset_io import Trajectory, load_tum, read_trajectory, write_trajectory
from .errors import DynVOError
from .evaluation import absolute_trajectory_error, relative_pose_error
from .geometry import Intrinsics, PoseSE3, se3_exp, se3_log
from .imaging import Frame, fill_depth_holes, load_frame
from .motion_mask import DYNAMIC, MASK_INVALID, STATIC, MaskConfig, pre_eliminate
from .refine import PipelineConfig, process_pair, run_sequence

__version__ = "0.1.0"

__all__ = [
    "AlignmentConfig",
    "DYNAMIC",
    "DynVOError",
    "Frame",
    "Intrinsics",
    "MASK_INVALID",
    "MaskConfig",
    "PipelineConfig",
    "PoseSE3",
    "STATIC",
    "Trajectory",
    "absolute_trajectory_error",
    "cluster_depth",
    "connected_components",
    "fill_depth_holes",
    "gauss_newton_align",
    "load_frame",
    "load_tum",
    "pre_eliminate",
    "process_pair",
    "read_trajectory",
    "reject_outliers",
    "relative_pose_error",
    "residuals",
    "run_sequence",
    "se3_exp",
    "se3_log",
    "write_trajectory",
]
