"""Synthetic scenes with known extrinsics.

The world frame uses camera axes (x right, y down, z forward). Sensor poses
map world points into the sensor frame. Scenes are made of rectangles: free
planes and axis-aligned boxes (six rectangles each).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .depth_refine import NormalizedDepthImage
from .geometry import RigidTransform, euler_to_matrix, relative_pose
from .projection import CameraIntrinsics, DepthImage, PointCloud


class EmptySceneError(ValueError):
    pass


@dataclass(frozen=True)
class Plane:
    """Rectangle of size ``extent`` (w, h) in the local x/y plane of ``pose``
    (local-to-world), centered on the pose origin."""

    pose: RigidTransform
    extent: tuple

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("plane extent must be positive")

    def rects(self) -> list["Rect"]:
        w, h = self.extent
        r = self.pose.rotation
        a, b = r[:, 0] * w, r[:, 1] * h
        return [Rect(self.pose.translation - 0.5 * a - 0.5 * b, a, b)]


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("box size must be positive")

    def rects(self) -> list["Rect"]:
        c = np.asarray(self.center, float)
        s = np.asarray(self.size, float)
        lo, hi = c - s / 2, c + s / 2
        ex, ey, ez = np.diag(s)
        return [
            Rect(lo, ey, ez), Rect(np.array([hi[0], lo[1], lo[2]]), ez, ey),
            Rect(lo, ez, ex), Rect(np.array([lo[0], hi[1], lo[2]]), ex, ez),
            Rect(lo, ex, ey), Rect(np.array([lo[0], lo[1], hi[2]]), ey, ex),
        ]


@dataclass(frozen=True, eq=False)
class Rect:
    origin: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.a, self.b)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.a, self.b)))

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to the rectangle."""
        d = points - self.origin
        aa, bb = self.a @ self.a, self.b @ self.b
        s = np.clip(d @ self.a / aa, 0, 1)
        t = np.clip(d @ self.b / bb, 0, 1)
        foot = self.origin + s[:, None] * self.a + t[:, None] * self.b
        return np.linalg.norm(points - foot, axis=1)


def intersect(rect: Rect, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the hit with ``rect`` (inf where missed or behind)."""
    n = np.cross(rect.a, rect.b)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((rect.origin - origin) @ n) / denom
        p = origin + t[:, None] * dirs - rect.origin
        s = p @ rect.a / (rect.a @ rect.a)
        u = p @ rect.b / (rect.b @ rect.b)
    hit = (np.abs(denom) > 1e-15) & (t > 0) & (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
    return np.where(hit, t, np.inf)


def cast(rects: Sequence[Rect], origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    t = np.full(len(dirs), np.inf)
    for r in rects:
        np.minimum(t, intersect(r, origin, dirs), out=t)
    return t


# ---------------------------------------------------------------------------

class DepthDistortion:
    """Monotone map from metric depth to an uncalibrated depth-like value.

    ``kind`` is ``identity``, ``affine`` or ``piecewise``. The piecewise map is
    concave with ``n_breaks`` kinks, so its inverse (uncalibrated value back to
    depth) has increasing slopes.
    """

    def __init__(self, knots_depth: np.ndarray, knots_value: np.ndarray):
        self.knots_depth = np.asarray(knots_depth, float)
        self.knots_value = np.asarray(knots_value, float)
        if np.any(np.diff(self.knots_depth) <= 0) or np.any(np.diff(self.knots_value) <= 0):
            raise ValueError("distortion knots must be strictly increasing")

    @classmethod
    def make(cls, kind: str, max_depth: float, rng: np.random.Generator, n_breaks: int = 3) -> "DepthDistortion":
        ends = np.array([0.0, max_depth])
        if kind == "identity":
            return cls(ends, ends)
        if kind == "affine":
            scale, offset = rng.uniform(0.2, 2.0), rng.uniform(0.0, 5.0)
            return cls(ends, offset + scale * ends)
        if kind == "piecewise":
            inner = np.sort(rng.uniform(0.1, 0.9, n_breaks)) * max_depth
            knots = np.concatenate([[0.0], inner, [max_depth]])
            slopes = np.sort(rng.uniform(0.1, 1.0, n_breaks + 1))[::-1]
            values = np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots))])
            return cls(knots, values)
        raise ValueError(f"unknown distortion kind {kind!r}")

    def __call__(self, depth: np.ndarray) -> np.ndarray:
        return np.interp(depth, self.knots_depth, self.knots_value)

    def inverse(self, value: np.ndarray) -> np.ndarray:
        return np.interp(value, self.knots_value, self.knots_depth)


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple = ()
    lidar_density: float = 60.0          # samples per square meter
    camera_density: float = 400.0        # camera depth cloud samples per square meter
    lidar_fov: tuple = (100.0, 40.0)     # horizontal, vertical full angles in degrees
    noise_sigma: float = 0.01
    seed: int = 0
    distortion: str = "piecewise"
    distortion_breaks: int = 3
    max_depth: float = 60.0

    def __post_init__(self):
        if self.lidar_density <= 0 or self.camera_density <= 0:
            raise ValueError("sampling densities must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")

    def rects(self) -> list[Rect]:
        return [r for p in self.primitives for r in p.rects()]


@dataclass(frozen=True, eq=False)
class SceneResult:
    lidar: PointCloud              # LiDAR frame, noisy
    cam_cloud: PointCloud          # camera frame, dense visible surface samples
    normalized_cdp: NormalizedDepthImage
    truth: RigidTransform          # LiDAR frame -> camera frame
    cam_depth: DepthImage          # true metric depth seen by the camera
    distortion: DepthDistortion
    value_range: tuple             # (min, max) of distorted values used for normalization
    lidar_clean: PointCloud        # same samples as ``lidar`` before noise


def corridor(seed: int = 0, **overrides) -> SceneSpec:
    """Corridor preset: 5 m wide, 3 m tall walls, 20 m long floor, three boxes.

    Box positions and sizes jitter with ``seed``; everything else is fixed.
    Floor at y = +1.3 (below the camera), walls at x = +-2.5, z from 0 to 20.
    Boxes are 1.0-1.6 m wide and deep and 1.6-2.4 m tall (tops above both
    sensors, so neither sees a box top edge-on), centered near
    (x, z) = (-1.2, 7), (1.0, 10) and (-0.2, 14) with up to 0.4 m / 1 m jitter.
    """
    rng = np.random.default_rng([seed, 7])
    floor_y, half_w, length = 1.3, 2.5, 20.0
    floor = Plane(RigidTransform(euler_to_matrix((0, 0, 90)), (0, floor_y, length / 2)), (2 * half_w, length))
    wall_rot = euler_to_matrix((0, 90, 0))
    left = Plane(RigidTransform(wall_rot, (-half_w, floor_y - 1.5, length / 2)), (length, 3.0))
    right = Plane(RigidTransform(wall_rot, (half_w, floor_y - 1.5, length / 2)), (length, 3.0))
    boxes = []
    for x0, z0 in [(-1.2, 7.0), (1.0, 10.0), (-0.2, 14.0)]:
        sx, sz = rng.uniform(1.0, 1.6, 2)
        sy = rng.uniform(1.6, 2.4)
        x = float(np.clip(x0 + rng.uniform(-0.4, 0.4), -half_w + sx / 2 + 0.1, half_w - sx / 2 - 0.1))
        z = z0 + rng.uniform(-1.0, 1.0)
        boxes.append(Box((x, floor_y - sy / 2, z), (sx, sy, sz)))
    return SceneSpec(primitives=(floor, left, right, *boxes), seed=seed, **overrides)


def terraces(depths: Sequence[float], seed: int = 0, **overrides) -> SceneSpec:
    """Camera-facing walls at the given depths, staggered so each stays visible."""
    n = len(depths)
    planes = []
    width = 8.0 / n
    for k, z in enumerate(sorted(depths)):
        x = -4.0 + width * (k + 0.5)
        planes.append(Plane(RigidTransform(np.eye(3), (x * z / 10.0, 0.0, z)), (width * z / 10.0 * 1.05, 4.0 * z / 10.0)))
    return SceneSpec(primitives=tuple(planes), seed=seed, **overrides)


def default_poses() -> tuple[RigidTransform, RigidTransform]:
    """(lidar_pose, cam_pose) as world-to-sensor transforms.

    The camera sits at the origin pitched 4 deg down; the LiDAR is mounted
    8 cm above, 10 cm behind and 5 cm right of it with a small attitude offset.
    """
    cam = RigidTransform(euler_to_matrix((0.0, 0.0, -4.0)), (0.0, 0.0, 0.0))
    lidar_center = np.array([0.05, -0.08, -0.10])
    r = euler_to_matrix((1.5, -1.0, 2.0))
    lidar = RigidTransform(r, -r @ lidar_center)
    return lidar, cam


def sample_surfaces(rects: Sequence[Rect], density: float, rng: np.random.Generator) -> np.ndarray:
    """Stratified jittered samples: one per grid cell of area ~1/density."""
    out = []
    for r in rects:
        la, lb = np.linalg.norm(r.a), np.linalg.norm(r.b)
        step = 1.0 / np.sqrt(density)
        na, nb = max(1, int(np.ceil(la / step))), max(1, int(np.ceil(lb / step)))
        ia, ib = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
        s = (ia.ravel() + rng.random(na * nb)) / na
        t = (ib.ravel() + rng.random(na * nb)) / nb
        out.append(r.origin + s[:, None] * r.a + t[:, None] * r.b)
    return np.concatenate(out) if out else np.zeros((0, 3))


def in_fov(points: np.ndarray, fov_deg: tuple) -> np.ndarray:
    x, y, z = points.T
    h = np.degrees(np.arctan2(x, z))
    v = np.degrees(np.arctan2(y, np.hypot(x, z)))
    return (np.abs(h) <= fov_deg[0] / 2) & (np.abs(v) <= fov_deg[1] / 2)


def in_image(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points whose projection falls on the image."""
    z = points[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = intr.fx * points[:, 0] / zs + intr.cx
    v = intr.fy * points[:, 1] / zs + intr.cy
    return front & (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)


def visible_from(rects: Sequence[Rect], origin: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Points not occluded by any rectangle along the ray from ``origin``."""
    d = points - origin
    dist = np.linalg.norm(d, axis=1)
    dirs = d / dist[:, None]
    hit = cast(rects, origin, dirs)
    return hit >= dist * (1 - 1e-9) - 1e-9


def render_depth(rects: Sequence[Rect], cam_pose: RigidTransform, intr: CameraIntrinsics) -> DepthImage:
    """Exact ray-cast depth (camera-frame z) per pixel center."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    rays_cam = np.column_stack([(u.ravel() - intr.cx) / intr.fx, (v.ravel() - intr.cy) / intr.fy,
                                np.ones(u.size)])
    r_wc = cam_pose.rotation.T
    origin = -r_wc @ cam_pose.translation
    dirs = rays_cam @ r_wc.T
    t = cast(rects, origin, dirs)  # ray z-component is 1, so t is camera depth
    depth = np.where(np.isfinite(t), t, 0.0).reshape(intr.shape)
    return DepthImage(intr, depth)


def generate_scene(spec: SceneSpec, lidar_pose: RigidTransform, cam_pose: RigidTransform,
                   intr: CameraIntrinsics) -> SceneResult:
    rects = spec.rects()
    rng = np.random.default_rng(spec.seed)

    world = sample_surfaces(rects, spec.lidar_density, rng)
    lidar_origin = -lidar_pose.rotation.T @ lidar_pose.translation
    local = lidar_pose.apply(world)
    keep = in_fov(local, spec.lidar_fov)
    keep[keep] = visible_from(rects, lidar_origin, world[keep])
    clean = local[keep]
    if len(clean) == 0:
        raise EmptySceneError("empty scene: nothing inside the LiDAR field of view")
    noisy = clean + rng.normal(0.0, spec.noise_sigma, clean.shape) if spec.noise_sigma > 0 else clean.copy()

    cam_depth = render_depth(rects, cam_pose, intr)
    if cam_depth.is_empty():
        raise EmptySceneError("empty scene: nothing inside the camera frustum")
    world = sample_surfaces(rects, spec.camera_density, rng)
    local = cam_pose.apply(world)
    keep = in_image(local, intr)
    cam_origin = -cam_pose.rotation.T @ cam_pose.translation
    keep[keep] = visible_from(rects, cam_origin, world[keep])
    cam_cloud = PointCloud(local[keep])

    distortion = DepthDistortion.make(spec.distortion, spec.max_depth, rng, spec.distortion_breaks)
    mask = cam_depth.valid
    g = distortion(cam_depth.depth)
    lo, hi = float(g[mask].min()), float(g[mask].max())
    span = hi - lo if hi > lo else 1.0
    values = np.where(mask, np.clip((g - lo) / span, 0.0, 1.0), 0.0)
    ncdp = NormalizedDepthImage(intr, values, mask)

    return SceneResult(
        lidar=PointCloud(noisy), cam_cloud=cam_cloud, normalized_cdp=ncdp,
        truth=relative_pose(cam_pose, lidar_pose), cam_depth=cam_depth,
        distortion=distortion, value_range=(lo, hi), lidar_clean=PointCloud(clean),
    )


def denormalize(ncdp: NormalizedDepthImage, result: SceneResult) -> np.ndarray:
    """Invert normalization and distortion: recovers the true depth map."""
    lo, hi = result.value_range
    g = ncdp.values * (hi - lo) + lo
    return np.where(ncdp.mask, result.distortion.inverse(g), 0.0)


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, seed=seed)
