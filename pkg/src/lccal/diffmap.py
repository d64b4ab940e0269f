"""Three-channel LiDAR/camera difference map."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .projection import DepthImage, PGM_MAXVAL, depth_to_millimeters, write_pgm16

DEFAULT_E_TAR = 0.1
OFFSET = 32768


@dataclass(frozen=True, eq=False)
class DifferenceMap:
    """``channels[0]`` is the LiDAR depth, ``channels[1]`` the depth difference where
    it exceeds ``e_tar`` in magnitude, ``channels[2]`` the difference where it does not."""

    channels: np.ndarray
    e_tar: float

    @property
    def lidar(self) -> np.ndarray:
        return self.channels[0]

    @property
    def large(self) -> np.ndarray:
        return self.channels[1]

    @property
    def small(self) -> np.ndarray:
        return self.channels[2]


def build_difference_map(ldp: DepthImage, cdp_metric: DepthImage, e_tar: float = DEFAULT_E_TAR,
                         mask_missing_lidar: bool = False) -> DifferenceMap:
    """Stack LiDAR depth with the magnitude-gated split of ``ldp - cdp``.

    Pixels without a LiDAR return keep ``delta = -cdp`` unless
    ``mask_missing_lidar`` is set, in which case their difference is zeroed.
    """
    if ldp.depth.shape != cdp_metric.depth.shape:
        raise ValueError("LDP and CDP resolutions differ")
    if not e_tar > 0:
        raise ValueError("e_tar must be positive")
    ld = ldp.depth
    delta = ld - cdp_metric.depth
    if mask_missing_lidar:
        delta = np.where(ld > 0, delta, 0.0)
    big = np.abs(delta) > e_tar
    channels = np.stack([ld.copy(), np.where(big, delta, 0.0), np.where(big, 0.0, delta)])
    channels.setflags(write=False)
    return DifferenceMap(channels, float(e_tar))


def write_difference_map(directory, dmap: DifferenceMap, prefix: str = "diff") -> list[Path]:
    """Dump as three 16-bit PGMs in millimeters; difference channels are offset by 32768."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{prefix}_{k}.pgm" for k in range(3)]
    write_pgm16(paths[0], depth_to_millimeters(dmap.lidar))
    for path, ch in zip(paths[1:], (dmap.large, dmap.small)):
        enc = np.floor(ch * 1000.0 + 0.5) + OFFSET
        write_pgm16(path, np.clip(enc, 0, PGM_MAXVAL).astype(np.int64))
    return paths
