"""Target-free LiDAR-camera extrinsic calibration on depth projections.

Modules: ``geometry`` (poses, Euler/quaternion math, error metrics),
``projection`` (pinhole z-buffer rendering, PGM depth files), ``depth_refine``
(anchor-based metric depth recovery), ``diffmap``, ``augment`` (mis-calibration
sampling), ``optimize`` (Chamfer-distance pose refinement), ``fusion``
(multi-frame pose averaging), ``scene`` (synthetic ground truth), ``io`` and ``cli``.
"""

__version__ = "0.1.0"

from .geometry import (MiscalibrationRange, RigidTransform, average_quaternions, compose, invert,
                       pose_error, relative_pose, sample_perturbation)
from .projection import CameraIntrinsics, DepthImage, PointCloud, back_project, project
from .depth_refine import AnchorSet, NormalizedDepthImage, refine, select_anchors
from .diffmap import build_difference_map
from .augment import generate_sample, generate_single_sided
from .optimize import ChamferParams, OptimizerConfig, chamfer, refine_pose, refine_pose_shared
from .fusion import ScoredPoseSet, fuse
from .scene import SceneSpec, corridor, default_poses, generate_scene

__all__ = [
    "MiscalibrationRange", "RigidTransform", "average_quaternions", "compose", "invert", "pose_error",
    "relative_pose", "sample_perturbation", "CameraIntrinsics", "DepthImage", "PointCloud", "back_project",
    "project", "AnchorSet", "NormalizedDepthImage", "refine", "select_anchors", "build_difference_map",
    "generate_sample", "generate_single_sided", "ChamferParams", "OptimizerConfig", "chamfer",
    "refine_pose", "refine_pose_shared", "ScoredPoseSet", "fuse", "SceneSpec", "corridor", "default_poses", "generate_scene",
]
