"""Pinhole rendering of point clouds into depth images and back.

Also holds the 16-bit PGM codec used for every depth-like image on disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import RigidTransform

PGM_MAXVAL = 65535


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def virtual(cls, height: int = 256, width: int = 512, focal: float = 600.0) -> "CameraIntrinsics":
        """Virtual camera used for depth projections: 256x512 pixels, f = 600."""
        return cls(focal, focal, width / 2.0, height / 2.0, width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if self.intensity is not None:
            i = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(i) != len(p):
                raise ValueError("intensity length does not match point count")
            i.setflags(write=False)
            object.__setattr__(self, "intensity", i)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: RigidTransform) -> "PointCloud":
        return PointCloud(pose.apply(self.points), self.intensity)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], None if self.intensity is None else self.intensity[idx])


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Metric depth in meters; 0 marks pixels without a measurement."""

    intrinsics: CameraIntrinsics
    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.shape != self.intrinsics.shape:
            raise ValueError(f"depth shape {d.shape} does not match intrinsics {self.intrinsics.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depths must be finite and nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def is_empty(self) -> bool:
        return not np.any(self.depth > 0)


def pixel_coordinates(cam_points: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-pixel (u, v) for camera-frame points with z > 0."""
    x, y, z = cam_points.T
    u = np.floor(intr.fx * x / z + intr.cx + 0.5).astype(np.int64)
    v = np.floor(intr.fy * y / z + intr.cy + 0.5).astype(np.int64)
    return u, v


def project(cloud: PointCloud | np.ndarray, pose: RigidTransform, intr: CameraIntrinsics) -> DepthImage:
    """Z-buffered nearest-pixel rendering of ``cloud`` seen through ``pose``."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    cam = pose.apply(pts)
    cam = cam[cam[:, 2] > 0]
    depth = np.zeros(intr.shape)
    if len(cam) == 0:
        return DepthImage(intr, depth)
    with np.errstate(over="ignore", invalid="ignore"):
        u, v = pixel_coordinates(cam, intr)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u, v, z = u[inside], v[inside], cam[inside, 2]
    flat = np.full(intr.width * intr.height, np.inf)
    np.minimum.at(flat, v * intr.width + u, z)
    flat[np.isinf(flat)] = 0.0
    return DepthImage(intr, flat.reshape(intr.shape))


def back_project(img: DepthImage, with_pixels: bool = False):
    """Camera-frame points for every pixel with positive depth (row-major order)."""
    intr = img.intrinsics
    v, u = np.nonzero(img.depth > 0)
    d = img.depth[v, u]
    pts = np.column_stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d])
    cloud = PointCloud(pts)
    if with_pixels:
        return cloud, (u, v)
    return cloud


# ---------------------------------------------------------------------------
# 16-bit binary PGM

def write_pgm16(path, values: np.ndarray) -> None:
    """Write an integer image in [0, 65535] as big-endian P5."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if np.any(values < 0) or np.any(values > PGM_MAXVAL):
        raise ValueError("PGM samples out of 16-bit range")
    h, w = values.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + values.astype(">u2").tobytes())


def pnm_header(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = pnm_header(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval < 256:
        raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    else:
        raster = np.frombuffer(data, dtype=">u2", count=w * h, offset=offset)
    return raster.reshape(h, w).astype(np.int64)


def depth_to_millimeters(depth: np.ndarray) -> np.ndarray:
    mm = np.floor(np.asarray(depth, dtype=float) * 1000.0 + 0.5)
    return np.clip(mm, 0, PGM_MAXVAL).astype(np.int64)


def write_depth_pgm(path, img: DepthImage | np.ndarray) -> None:
    """Depth in millimeters, 0 = no data; depths beyond 65.535 m saturate."""
    depth = img.depth if isinstance(img, DepthImage) else img
    write_pgm16(path, depth_to_millimeters(depth))


def read_depth_pgm(path, intr: CameraIntrinsics | None = None) -> DepthImage:
    mm = read_pgm16(path)
    if intr is None:
        h, w = mm.shape
        intr = CameraIntrinsics.virtual(h, w)
    return DepthImage(intr, mm / 1000.0)
