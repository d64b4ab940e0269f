"""Metric depth from a normalized depth map and a sparse LiDAR projection.

Run: python3 demos/01_depth_refinement.py [output_dir]
"""

# %% A corridor scene. The camera sees it through a monotone depth distortion,
# the way a monocular network reports relative depth: right ordering, wrong scale.
import sys
from pathlib import Path

import numpy as np

from lccal import CameraIntrinsics, corridor, default_poses, generate_scene, project
from lccal.depth_refine import depth_metrics, refine
from lccal.diffmap import build_difference_map, write_difference_map
from lccal.io import render_overlay
from lccal.projection import write_depth_pgm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "depth"
out.mkdir(parents=True, exist_ok=True)

intr = CameraIntrinsics.virtual()
lidar_pose, cam_pose = default_poses()
scene = generate_scene(corridor(seed=1), lidar_pose, cam_pose, intr)
ncdp = scene.normalized_cdp
print(f"normalized camera depth covers {ncdp.mask.mean():.0%} of the image")

# %% Project the LiDAR cloud at the true extrinsic. Only a few percent of
# pixels receive a return.
ldp = project(scene.lidar, scene.truth, intr)
print(f"LiDAR projection covers {ldp.valid.mean():.1%} of the image")

# %% Anchor refinement: pair camera and LiDAR depth where both exist, keep the
# longest monotone convex chain, and remap every camera pixel through it.
metric, anchors = refine(ldp, ncdp, return_anchors=True)
print(f"{len(anchors)} anchors, camera value -> metres:")
for c, d in anchors.pairs[:: max(1, len(anchors) // 6)]:
    print(f"  {c:.3f} -> {d:6.2f} m")

# %% How close is the result to the true depth? A naive fit (one global scale)
# is shown for contrast.
truth = scene.cam_depth
m = depth_metrics(metric, truth)
both = ldp.valid & ncdp.mask
scale = np.median(ldp.depth[both] / np.maximum(ncdp.values[both], 1e-6))
naive = depth_metrics(np.where(ncdp.mask, ncdp.values * scale, 0.0), truth)
print(f"anchor refinement: MAE {m.mae:.3f} m, abs-rel {m.abs_rel:.3f}, delta1 {m.delta1:.3f}")
print(f"single global scale: MAE {naive.mae:.3f} m, abs-rel {naive.abs_rel:.3f}, delta1 {naive.delta1:.3f}")

# %% The difference map separates large LiDAR/camera disagreements from small ones.
dmap = build_difference_map(ldp, metric, e_tar=0.1, mask_missing_lidar=True)
print(f"pixels with |LiDAR - camera| > 0.1 m: {np.count_nonzero(dmap.large)}, "
      f"within: {np.count_nonzero(dmap.small)}")

write_depth_pgm(out / "refined.pgm", metric)
write_difference_map(out, dmap)
render_overlay(ldp, metric, out / "overlay.ppm")
print(f"wrote refined depth, difference map and overlay to {out}")
