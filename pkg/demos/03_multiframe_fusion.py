"""Fuse per-frame extrinsic estimates from several scenes into one.

Run: python3 demos/03_multiframe_fusion.py
"""

# %% Several frames sharing one rig. Each frame is refined on its own from the
# same rough initial guess, and a short iteration cap keeps some of them noisy.
import numpy as np

from lccal import (CameraIntrinsics, MiscalibrationRange, OptimizerConfig, compose, corridor, default_poses,
                   generate_scene, pose_error, refine_pose, relative_pose, sample_perturbation)
from lccal.fusion import ScoredPoseSet, fuse, score_self_supervised

intr = CameraIntrinsics.virtual()
lidar_pose, cam_pose = default_poses()
truth = relative_pose(cam_pose, lidar_pose)
init = compose(sample_perturbation(MiscalibrationRange.uniform_axes(9.0, 0.45), np.random.default_rng(0)), truth)
config = OptimizerConfig(max_iters=4)

poses, scores = [], []
for seed in range(6):
    scene = generate_scene(corridor(seed), lidar_pose, cam_pose, intr)
    res = refine_pose(scene.lidar, scene.cam_cloud, init, config, intrinsics=intr)
    err = pose_error(res.pose, scene.truth)
    s = score_self_supervised(res.pose, scene.lidar, scene.cam_cloud, intrinsics=intr)
    poses.append(res.pose)
    scores.append(s)
    print(f"frame {seed}: error {err.rotation_deg:.3f} deg / {err.translation_m:.4f} m, score {s:.4f}")

# %% Keep the better-scoring half, weight by score, average rotations through
# their quaternions and translations directly.
fused = fuse(ScoredPoseSet(tuple(poses), tuple(scores), 0.5))
err = pose_error(fused, truth)
single = [pose_error(p, truth) for p in poses]
print(f"median single-frame error: {np.median([e.rotation_deg for e in single]):.3f} deg / "
      f"{np.median([e.translation_m for e in single]):.4f} m")
print(f"fused error:               {err.rotation_deg:.3f} deg / {err.translation_m:.4f} m")
