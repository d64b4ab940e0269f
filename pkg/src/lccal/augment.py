"""Single- and double-sided mis-calibration sampling.

Poses here map the LiDAR frame into a (virtual) sensor frame. The camera depth
cloud is given in the camera frame and is moved into the LiDAR frame with the
inverse base extrinsic before rendering, so both clouds share one frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (MiscalibrationRange, RigidTransform, compose, invert, read_pose,
                       relative_pose, sample_perturbation, write_poses)
from .projection import CameraIntrinsics, DepthImage, PointCloud, project, read_depth_pgm, write_depth_pgm


class NoOverlapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AugmentedSample:
    ldp: DepthImage
    cdp: DepthImage
    t_cam: RigidTransform
    t_lidar: RigidTransform
    t_gt: RigidTransform


def _render_pair(lidar_cloud, cam_cloud_lidar_frame, t_cam, t_lidar, intr):
    cdp = project(cam_cloud_lidar_frame, t_cam, intr)
    ldp = project(lidar_cloud, t_lidar, intr)
    if cdp.is_empty() or ldp.is_empty():
        raise NoOverlapError("no overlap: a rendered depth projection is empty")
    return ldp, cdp


def generate_sample(lidar_cloud: PointCloud, cam_depth_cloud: PointCloud, base_extrinsic: RigidTransform,
                    c_cam: MiscalibrationRange, c_lidar: MiscalibrationRange,
                    intr: CameraIntrinsics, seed: int) -> AugmentedSample:
    """Double-sided sample: perturb the camera around the base extrinsic, then the
    LiDAR around the perturbed camera, and render both projections."""
    if len(lidar_cloud) == 0 or len(cam_depth_cloud) == 0:
        raise ValueError("clouds must be non-empty")
    rng = np.random.default_rng(seed)
    d_cam = sample_perturbation(c_cam, rng)
    d_lidar = sample_perturbation(c_lidar, rng)
    t_cam = compose(d_cam, base_extrinsic)
    t_lidar = compose(d_lidar, t_cam)
    q_lidar_frame = cam_depth_cloud.transformed(invert(base_extrinsic))
    ldp, cdp = _render_pair(lidar_cloud, q_lidar_frame, t_cam, t_lidar, intr)
    return AugmentedSample(ldp, cdp, t_cam, t_lidar, relative_pose(t_cam, t_lidar))


def generate_single_sided(lidar_cloud: PointCloud, cam_depth_cloud: PointCloud, base_extrinsic: RigidTransform,
                          rng_range: MiscalibrationRange, intr: CameraIntrinsics, seed: int) -> AugmentedSample:
    """Classic single-sided sample: the camera stays at the base extrinsic and only
    the LiDAR projection is perturbed, so every seed shares one CDP."""
    if len(lidar_cloud) == 0 or len(cam_depth_cloud) == 0:
        raise ValueError("clouds must be non-empty")
    rng = np.random.default_rng(seed)
    delta = sample_perturbation(rng_range, rng)
    t_cam = base_extrinsic
    t_lidar = compose(delta, base_extrinsic)
    q_lidar_frame = cam_depth_cloud.transformed(invert(base_extrinsic))
    ldp, cdp = _render_pair(lidar_cloud, q_lidar_frame, t_cam, t_lidar, intr)
    return AugmentedSample(ldp, cdp, t_cam, t_lidar, relative_pose(t_cam, t_lidar))


# ---------------------------------------------------------------------------
# sample bundle directory

def write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def intrinsics_meta(intr: CameraIntrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def intrinsics_from_meta(meta: dict) -> CameraIntrinsics:
    return CameraIntrinsics(float(meta["fx"]), float(meta["fy"]), float(meta["cx"]), float(meta["cy"]),
                            int(meta["width"]), int(meta["height"]))


def write_bundle(directory, sample: AugmentedSample, meta: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_depth_pgm(d / "ldp.pgm", sample.ldp)
    write_depth_pgm(d / "cdp.pgm", sample.cdp)
    write_poses(d / "t_cam.txt", [sample.t_cam])
    write_poses(d / "t_lidar.txt", [sample.t_lidar])
    write_poses(d / "t_gt.txt", [sample.t_gt])
    write_meta(d / "meta.txt", {**intrinsics_meta(sample.ldp.intrinsics), **(meta or {})})
    return d


def read_bundle(directory) -> tuple[AugmentedSample, dict]:
    d = Path(directory)
    meta = read_meta(d / "meta.txt")
    intr = intrinsics_from_meta(meta)
    sample = AugmentedSample(
        ldp=read_depth_pgm(d / "ldp.pgm", intr),
        cdp=read_depth_pgm(d / "cdp.pgm", intr),
        t_cam=read_pose(d / "t_cam.txt"),
        t_lidar=read_pose(d / "t_lidar.txt"),
        t_gt=read_pose(d / "t_gt.txt"),
    )
    return sample, meta
