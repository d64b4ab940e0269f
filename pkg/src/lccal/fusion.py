"""Multi-frame extrinsic fusion: score, keep the best fraction, average."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (RigidTransform, average_quaternions, quaternion_to_rotation, read_pose,
                       rotation_to_quaternion)
from .optimize import EVAL_SCALE, ChamferParams, chamfer, eval_loss
from .projection import CameraIntrinsics
from .scene import in_image

DEFAULT_RATIO = 0.5


@dataclass(frozen=True)
class ScoredPoseSet:
    poses: tuple
    scores: tuple
    selection_ratio: float = DEFAULT_RATIO

    def __post_init__(self):
        if len(self.poses) != len(self.scores):
            raise ValueError("need one score per pose")
        if len(self.poses) == 0:
            raise ValueError("empty pose set")
        if any(not (s > 0) for s in self.scores):
            raise ValueError("scores must be positive")
        if not 0 < self.selection_ratio <= 1:
            raise ValueError("selection ratio must be in (0, 1]")
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    @property
    def k(self) -> int:
        return selection_count(self.selection_ratio, len(self.poses))


def selection_count(ratio: float, n: int) -> int:
    # guard ceil against ratio*n landing a hair above an integer
    return max(1, min(n, math.ceil(round(ratio * n, 9))))


def score_self_supervised(pose: RigidTransform, lidar_cloud, cam_cloud,
                          params: ChamferParams = ChamferParams(),
                          intrinsics: CameraIntrinsics | None = None) -> float:
    """``exp(-chamfer)`` of the LiDAR cloud moved by ``pose`` against the camera cloud.

    With ``intrinsics``, LiDAR points outside the image are left out first, so
    the score reflects alignment rather than field-of-view mismatch.
    """
    pts = lidar_cloud.points if hasattr(lidar_cloud, "points") else np.asarray(lidar_cloud, float)
    moved = pose.apply(pts)
    if intrinsics is not None:
        moved = moved[in_image(moved, intrinsics)]
    return math.exp(-chamfer(moved, cam_cloud, params))


def score_supervised(pose: RigidTransform, reference: RigidTransform, scale: float = EVAL_SCALE) -> float:
    """``exp(-(scale * ||e_ref - e|| + ||t_ref - t||))`` against a reference pose."""
    return math.exp(-eval_loss(pose, reference, scale))


def select_top(pose_set: ScoredPoseSet) -> tuple[list[int], np.ndarray]:
    """Indices of the top ``k`` poses (stable for ties) and their normalized weights."""
    order = sorted(range(len(pose_set.scores)), key=lambda i: -pose_set.scores[i])
    top = order[:pose_set.k]
    s = np.array([pose_set.scores[i] for i in top])
    return top, s / s.sum()


def fuse(pose_set: ScoredPoseSet, uniform: bool = False) -> RigidTransform:
    """Weighted mean translation and eigen-averaged rotation of the top-scoring poses.

    ``uniform=True`` gives every selected pose the same weight instead of
    weighting by score.
    """
    top, w = select_top(pose_set)
    if uniform:
        w = np.full(len(top), 1.0 / len(top))
    poses = [pose_set.poses[i] for i in top]
    t = np.sum([wi * p.translation for wi, p in zip(w, poses)], axis=0)
    quats = np.array([rotation_to_quaternion(p.rotation) for p in poses])
    q = average_quaternions(quats, w)
    return RigidTransform(quaternion_to_rotation(q), t)


# ---------------------------------------------------------------------------

def read_scores(path) -> dict[int, float]:
    """``scores.txt``: one ``index score`` pair per line."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'index score'")
        out[int(parts[0])] = float(parts[1])
    return out


def write_scores(path, scores: Sequence[float]) -> None:
    Path(path).write_text("".join(f"{i} {s!r}\n" for i, s in enumerate(scores)))


def load_pose_directory(directory, ratio: float = DEFAULT_RATIO) -> ScoredPoseSet:
    """Pose files (``*.txt`` except ``scores.txt``/``fused.txt``, name order) plus ``scores.txt``.

    Scores index the pose files in sorted order; a missing manifest means equal scores.
    """
    d = Path(directory)
    files = sorted(p for p in d.glob("*.txt") if p.name not in ("scores.txt", "fused.txt"))
    if not files:
        raise ValueError(f"{d}: no pose files")
    poses = [read_pose(p) for p in files]
    if (d / "scores.txt").exists():
        table = read_scores(d / "scores.txt")
        missing = [i for i in range(len(poses)) if i not in table]
        if missing:
            raise ValueError(f"{d}/scores.txt: no score for pose index {missing[0]}")
        scores = [table[i] for i in range(len(poses))]
    else:
        scores = [1.0] * len(poses)
    return ScoredPoseSet(tuple(poses), tuple(scores), ratio)
