"""LiDAR-guided refinement of normalized monocular depth (DAR).

Sparse LiDAR depths and a dense normalized camera depth map are paired at
coincident pixels. The pairs are thinned to at most one per bin, the longest
chain that is increasing in camera depth, nondecreasing in LiDAR depth and has
nondecreasing secant slopes is kept, and the whole camera map is pushed
through the resulting piecewise-linear curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .projection import CameraIntrinsics, DepthImage, PGM_MAXVAL, read_pgm16, write_pgm16

DEFAULT_ANCHORS = 32
SLOPE_RTOL = 1e-12


class AnchorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Pairs (normalized camera depth, metric LiDAR depth), sorted by camera depth."""

    camera: np.ndarray
    lidar: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.camera, dtype=float).reshape(-1)
        ld = np.asarray(self.lidar, dtype=float).reshape(-1)
        if c.shape != ld.shape:
            raise ValueError("camera and lidar depth arrays differ in length")
        c.setflags(write=False)
        ld.setflags(write=False)
        object.__setattr__(self, "camera", c)
        object.__setattr__(self, "lidar", ld)

    def __len__(self) -> int:
        return len(self.camera)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.camera.tolist(), self.lidar.tolist()))

    def slopes(self) -> np.ndarray:
        return np.diff(self.lidar) / np.diff(self.camera)


@dataclass(frozen=True, eq=False)
class NormalizedDepthImage:
    """Relative depth in [0, 1]. ``mask`` marks pixels that carry an estimate."""

    intrinsics: CameraIntrinsics
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.intrinsics.shape:
            raise ValueError("normalized depth shape does not match intrinsics")
        if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise ValueError("normalized depth must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        m = np.ones(v.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != v.shape:
            raise ValueError("mask shape does not match values")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


def slope_ok(prev: float, nxt: float, rtol: float = SLOPE_RTOL) -> bool:
    """Convexity predicate ``nxt >= prev`` with a relative round-off allowance."""
    return nxt >= prev - rtol * max(1.0, abs(prev))


# ---------------------------------------------------------------------------

def extract_anchors(ldp: DepthImage, cdp: NormalizedDepthImage) -> AnchorSet:
    """Raw anchors at every pixel with a LiDAR return and a camera estimate.

    Pairs sharing the same camera depth are merged into one whose LiDAR depth is
    the median of the group, so camera depths come out strictly increasing.
    """
    if ldp.depth.shape != cdp.values.shape:
        raise ValueError("LDP and CDP resolutions differ")
    sel = (ldp.depth > 0) & cdp.mask
    if not np.any(sel):
        raise AnchorError("no anchors: LDP and CDP have no coincident valid pixels")
    c = cdp.values[sel]
    ld = ldp.depth[sel]
    order = np.lexsort((ld, c))
    c, ld = c[order], ld[order]
    uniq, start, counts = np.unique(c, return_index=True, return_counts=True)
    if len(uniq) == len(c):
        return AnchorSet(c, ld)
    merged = ld[start].copy()
    for k in np.nonzero(counts > 1)[0]:
        merged[k] = np.median(ld[start[k]:start[k] + counts[k]])
    return AnchorSet(uniq, merged)


def thin_candidates(raw: AnchorSet, n_bins: int) -> AnchorSet:
    """Keep the point closest to a per-bin least-squares line, one per bin.

    Bins split ``[min, max]`` of the camera depths evenly; the last bin is closed.
    Single-point bins keep their point. The first and last bins keep their
    extreme point instead, so the anchor curve spans the whole observed range
    and nothing observed falls into the clamped tails.
    """
    x, y = raw.camera, raw.lidar
    if len(x) == 0:
        raise AnchorError("no anchors")
    lo, hi = x[0], x[-1]
    if hi == lo:
        return AnchorSet(x[:1], y[:1])
    idx = np.minimum(((x - lo) / (hi - lo) * n_bins).astype(np.int64), n_bins - 1)
    bounds = np.searchsorted(idx, np.arange(n_bins + 1))
    keep = []
    for b in range(n_bins):
        s, e = bounds[b], bounds[b + 1]
        if e - s == 0:
            continue
        if e - s == 1 or b == 0:
            keep.append(s)
            continue
        if b == n_bins - 1:
            keep.append(e - 1)
            continue
        xb, yb = x[s:e], y[s:e]
        xm, ym = xb.mean(), yb.mean()
        dx = xb - xm
        slope = np.dot(dx, yb - ym) / np.dot(dx, dx)
        resid = np.abs(yb - (ym + slope * dx))
        keep.append(s + int(np.argmin(resid)))
    keep = np.asarray(keep)
    return AnchorSet(x[keep], y[keep])


def longest_convex_chain(x: np.ndarray, y: np.ndarray, rtol: float = SLOPE_RTOL) -> np.ndarray:
    """Indices of a maximum-cardinality monotone convex subsequence.

    ``x`` must be strictly increasing. The chain has nondecreasing ``y`` and
    nondecreasing secant slopes. States are indexed by the chain's last edge
    (j -> i), which makes the recursion exact; among optimal chains the one with
    the smallest final slope wins, and predecessors are chosen to keep the slope
    change at each joint as small as possible.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(x)
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    if m == 1:
        return np.zeros(1, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        slope = (y[None, :] - y[:, None]) / (x[None, :] - x[:, None])
    edge = np.triu(y[None, :] >= y[:, None], k=1)  # edge[j, i]: j < i, y_i >= y_j
    length = np.where(edge, 2, 0).astype(np.int64)
    pred = np.full((m, m), -1, dtype=np.int64)

    for j in range(1, m - 1):
        ks = np.nonzero(edge[:j, j])[0]
        iis = np.nonzero(edge[j, j + 1:])[0] + j + 1
        if len(ks) == 0 or len(iis) == 0:
            continue
        s_in = slope[ks, j]
        s_out = slope[j, iis]
        ok = s_out[None, :] >= s_in[:, None] - rtol * np.maximum(1.0, np.abs(s_in))[:, None]
        cand = np.where(ok, length[ks, j][:, None] + 1, 0)
        best = cand.max(axis=0)
        # among best-length predecessors prefer the steepest incoming slope
        tie = np.where(cand == best[None, :], s_in[:, None], -np.inf)
        arg = np.argmax(tie, axis=0)
        improve = best > length[j, iis]
        length[j, iis[improve]] = best[improve]
        pred[j, iis[improve]] = ks[arg[improve]]

    best_len = length.max()
    if best_len < 2:
        return np.array([int(np.argmin(x))])
    js, iis = np.nonzero(length == best_len)
    pick = np.argmin(slope[js, iis])
    j, i = int(js[pick]), int(iis[pick])
    chain = [i, j]
    while pred[j, i] >= 0:
        j, i = int(pred[j, i]), j
        chain.append(j)
    return np.array(chain[::-1], dtype=np.int64)


def subsample_uniform(x: np.ndarray, count: int) -> np.ndarray:
    """``count`` indices of sorted ``x`` nearest to evenly spaced targets, endpoints kept."""
    n = len(x)
    if count >= n:
        return np.arange(n)
    if count < 2:
        raise ValueError("need at least two anchors")
    targets = np.linspace(x[0], x[-1], count)
    chosen = [0]
    for k in range(1, count - 1):
        lo = chosen[-1] + 1
        hi = n - (count - k)  # leave room for the remaining picks
        cand = np.arange(lo, hi + 1)
        chosen.append(int(cand[np.argmin(np.abs(x[cand] - targets[k]))]))
    chosen.append(n - 1)
    return np.asarray(chosen)


def validate_anchors(anchors: AnchorSet, rtol: float = SLOPE_RTOL) -> None:
    """Raise ``AnchorError`` unless the monotone/convex constraints hold."""
    c, ld = anchors.camera, anchors.lidar
    if len(c) < 2:
        raise AnchorError("degenerate anchors: fewer than two points")
    if np.any(np.diff(c) <= 0):
        raise AnchorError("camera depths are not strictly increasing")
    if np.any(np.diff(ld) < 0):
        raise AnchorError("lidar depths decrease")
    s = anchors.slopes()
    for a, b in zip(s[:-1], s[1:]):
        if not slope_ok(a, b, rtol):
            raise AnchorError("secant slopes decrease")


def select_anchors(raw: AnchorSet, target_count: int = DEFAULT_ANCHORS) -> AnchorSet:
    """Two-stage selection: per-bin thinning into 2T candidates, then the longest
    monotone convex chain, subsampled to ``target_count`` if longer."""
    if target_count < 2:
        raise ValueError("target_count must be at least 2")
    if len(raw) == 0:
        raise AnchorError("no anchors")
    cand = thin_candidates(raw, 2 * target_count)
    chain = longest_convex_chain(cand.camera, cand.lidar)
    if len(chain) < 2:
        raise AnchorError("degenerate anchors: fewer than two selectable points")
    x, y = cand.camera[chain], cand.lidar[chain]
    if len(chain) > target_count:
        keep = subsample_uniform(x, target_count)
        x, y = x[keep], y[keep]
    out = AnchorSet(x, y)
    validate_anchors(out)
    return out


def piecewise_linear(values: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Anchor curve: clamped outside the anchor range, linear between anchors."""
    return np.interp(values, anchors.camera, anchors.lidar)


def remap_depth(img: NormalizedDepthImage, anchors: AnchorSet) -> DepthImage:
    if len(anchors) < 2:
        raise AnchorError("degenerate anchors: need at least two")
    out = np.where(img.mask, piecewise_linear(img.values, anchors), 0.0)
    return DepthImage(img.intrinsics, out)


def refine(ldp: DepthImage, cdp: NormalizedDepthImage, target_count: int = DEFAULT_ANCHORS,
           return_anchors: bool = False):
    """Metric depth map from a normalized one, guided by sparse LiDAR depth."""
    anchors = select_anchors(extract_anchors(ldp, cdp), target_count)
    out = remap_depth(cdp, anchors)
    return (out, anchors) if return_anchors else out


# ---------------------------------------------------------------------------

class DepthMetrics(NamedTuple):
    mae: float
    rmse: float
    abs_rel: float
    sq_rel: float
    delta1: float
    delta2: float
    delta3: float
    count: int


def depth_metrics(pred: DepthImage | np.ndarray, truth: DepthImage | np.ndarray, mask=None) -> DepthMetrics:
    """Standard depth-quality metrics over pixels where both maps are positive."""
    p = pred.depth if isinstance(pred, DepthImage) else np.asarray(pred, dtype=float)
    t = truth.depth if isinstance(truth, DepthImage) else np.asarray(truth, dtype=float)
    sel = (p > 0) & (t > 0)
    if mask is not None:
        sel &= np.asarray(mask, bool)
    if not np.any(sel):
        raise ValueError("no overlapping valid pixels")
    p, t = p[sel], t[sel]
    err = p - t
    ratio = np.maximum(p / t, t / p)
    return DepthMetrics(
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        abs_rel=float(np.mean(np.abs(err) / t)),
        sq_rel=float(np.mean(err ** 2 / t)),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        count=int(sel.sum()),
    )


# ---------------------------------------------------------------------------
# normalized depth on disk: 16-bit PGM, 65535 <-> 1.0

def write_normalized_pgm(path, img: NormalizedDepthImage) -> None:
    v = np.floor(np.where(img.mask, img.values, 0.0) * PGM_MAXVAL + 0.5).astype(np.int64)
    write_pgm16(path, v)


def read_normalized_pgm(path, intr: CameraIntrinsics | None = None,
                        zero_is_invalid: bool = False) -> NormalizedDepthImage:
    raw = read_pgm16(path)
    if intr is None:
        intr = CameraIntrinsics.virtual(*raw.shape)
    mask = raw > 0 if zero_is_invalid else None
    return NormalizedDepthImage(intr, raw / PGM_MAXVAL, mask)
