"""Loss terms and Chamfer-distance pose refinement.

The pose being refined maps LiDAR points into the camera frame. Refinement
alternates nearest-neighbour association with damped Gauss-Newton steps on a
right-composed increment ``T ∘ (Exp(w), v)``, so that ``R' = R Exp(w)`` and
``t' = t + R v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import minimum_filter
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import RigidTransform, euler_difference, matrix_to_euler, project_to_so3
from .projection import CameraIntrinsics, PointCloud

log = logging.getLogger(__name__)

EVAL_SCALE = 0.1  # degrees -> meters balance: 1 deg counts like 0.1 m


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChamferParams:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha, beta must be nonnegative with a positive sum")


class LossBreakdown(NamedTuple):
    l_cd: float = 0.0
    l_t_ini: float = 0.0
    l_eva: float = 0.0
    l_r_gt: float = 0.0
    l_t_gt: float = 0.0
    l_cloud: float = 0.0
    total: float = 0.0


class SpatialIndex:
    """Immutable k-d tree over a point set (backed by ``scipy.spatial.cKDTree``)."""

    def __init__(self, points: np.ndarray | PointCloud):
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        self.points = np.array(pts, dtype=float)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Squared distance to, and index of, the nearest indexed point."""
        d, idx = self._tree.query(np.asarray(queries, dtype=float), k=1)
        return d * d, idx


def _pts(c) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)


def chamfer(p, q, params: ChamferParams = ChamferParams()) -> float:
    """Weighted two-sided mean of squared nearest-neighbour distances."""
    p, q = _pts(p), _pts(q)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("chamfer distance of an empty cloud")
    d_pq, _ = SpatialIndex(q).query(p)
    d_qp, _ = SpatialIndex(p).query(q)
    return float(params.alpha * d_pq.mean() + params.beta * d_qp.mean())


# ---------------------------------------------------------------------------
# loss terms

def supervised_losses(pred_rot: np.ndarray, pred_trans: np.ndarray, t_cam: RigidTransform,
                      t_lidar: RigidTransform, cloud) -> LossBreakdown:
    """Ground-truth supervised rotation, translation and point-distance terms.

    Rotation: entrywise L1 of ``R_cam (R R_lidar)^-1 - I``. Translation:
    ``||t_cam - (t_lidar + t)||``. Cloud: summed distance between LiDAR points
    moved by the prediction after ``t_lidar`` and the same points moved by ``t_cam``.
    """
    r = np.asarray(pred_rot, dtype=float)
    t = np.asarray(pred_trans, dtype=float).reshape(3)
    pts = _pts(cloud)
    l_r = float(np.abs(t_cam.rotation @ (r @ t_lidar.rotation).T - np.eye(3)).sum())
    l_t = float(np.linalg.norm(t_cam.translation - (t_lidar.translation + t)))
    moved = (pts @ t_lidar.rotation.T + t_lidar.translation) @ r.T + t
    ref = pts @ t_cam.rotation.T + t_cam.translation
    l_c = float(np.linalg.norm(moved - ref, axis=1).sum())
    return LossBreakdown(l_r_gt=l_r, l_t_gt=l_t, l_cloud=l_c, total=l_r + l_t + l_c)


def eval_loss(candidate: RigidTransform, reference: RigidTransform, scale: float = EVAL_SCALE) -> float:
    """``scale * ||euler_ref - euler|| + ||t_ref - t||`` (degrees, meters)."""
    de = euler_difference(reference.rotation, candidate.rotation)
    return float(scale * np.linalg.norm(de) + np.linalg.norm(reference.translation - candidate.translation))


def self_supervised_loss(candidate: RigidTransform, lidar_cloud, cam_cloud,
                         init_guess: RigidTransform | None = None,
                         external_eval: RigidTransform | None = None,
                         params: ChamferParams = ChamferParams(),
                         eval_scale: float = EVAL_SCALE) -> LossBreakdown:
    """Chamfer term plus the optional initial-guess and evaluator terms.

    Missing ``init_guess`` or ``external_eval`` contribute zero.
    """
    moved = candidate.apply(_pts(lidar_cloud))
    l_cd = chamfer(moved, cam_cloud, params)
    l_ini = 0.0 if init_guess is None else float(np.linalg.norm(init_guess.translation - candidate.translation))
    l_eva = 0.0 if external_eval is None else eval_loss(candidate, external_eval, eval_scale)
    return LossBreakdown(l_cd=l_cd, l_t_ini=l_ini, l_eva=l_eva, total=l_cd + l_ini + l_eva)


# ---------------------------------------------------------------------------
# residuals with fixed correspondences

def skew_rows(p: np.ndarray) -> np.ndarray:
    """(N, 3, 3) stack of cross-product matrices."""
    z = np.zeros(len(p))
    x, y, w = p.T
    return np.stack([np.stack([z, -w, y], -1), np.stack([w, z, -x], -1), np.stack([-y, x, z], -1)], 1)


def retract(pose: RigidTransform, delta: np.ndarray) -> RigidTransform:
    """``pose ∘ (Exp(delta[:3]), delta[3:])``."""
    delta = np.asarray(delta, dtype=float)
    r = project_to_so3(pose.rotation @ Rotation.from_rotvec(delta[:3]).as_matrix())
    return RigidTransform(r, pose.translation + pose.rotation @ delta[3:])


class Pairs(NamedTuple):
    """Fixed correspondences for one frame.

    Forward pairs send LiDAR points (LiDAR frame) to their nearest camera point;
    reverse pairs send every camera point to its nearest LiDAR point.
    """

    fwd_src: np.ndarray
    fwd_dst: np.ndarray
    rev_src: np.ndarray
    rev_dst: np.ndarray
    fwd_sqdist: np.ndarray
    rev_sqdist: np.ndarray

    def chamfer(self, params: ChamferParams) -> float:
        return float(params.alpha * self.fwd_sqdist.mean() + params.beta * self.rev_sqdist.mean())


def _depth_buffer(cam: np.ndarray, intr: CameraIntrinsics, window: int = 5) -> np.ndarray:
    """Nearest camera-cloud depth per pixel, holes filled by a local minimum."""
    buf = np.full(intr.shape, np.inf)
    z = cam[:, 2]
    ok = z > 0
    u = np.floor(intr.fx * cam[ok, 0] / z[ok] + intr.cx + 0.5).astype(int)
    v = np.floor(intr.fy * cam[ok, 1] / z[ok] + intr.cy + 0.5).astype(int)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    np.minimum.at(buf, (v[inside], u[inside]), z[ok][inside])
    return minimum_filter(buf, size=window, mode="nearest")


@dataclass
class Frame:
    """One (LiDAR cloud, camera cloud) pair with prebuilt search trees.

    ``lidar`` stays in the LiDAR frame and ``cam`` in the camera frame, so both
    trees are built once: the reverse search maps camera points through the
    inverse pose instead of re-indexing the moved LiDAR cloud.

    With ``intrinsics`` set, the forward term only uses LiDAR points that land
    inside the image at the current pose, i.e. the points a LiDAR depth
    projection would contain. ``occlusion_margin`` additionally drops LiDAR
    points lying more than that far (plus 2 % of depth) behind the camera
    cloud's own depth buffer, which removes surfaces the camera cannot see.
    """

    lidar: np.ndarray
    cam: np.ndarray
    intrinsics: CameraIntrinsics | None = None
    occlusion_margin: float | None = None
    lidar_index: SpatialIndex = field(init=False)
    cam_index: SpatialIndex = field(init=False)
    zbuf: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        self.lidar_index = SpatialIndex(self.lidar)
        self.cam_index = SpatialIndex(self.cam)
        if self.intrinsics is not None and self.occlusion_margin is not None and np.isfinite(self.occlusion_margin):
            self.zbuf = _depth_buffer(self.cam, self.intrinsics)

    def visible(self, moved: np.ndarray, occlusion: bool = True) -> np.ndarray:
        intr = self.intrinsics
        if intr is None:
            return np.ones(len(moved), bool)
        front = moved[:, 2] > 0
        u = np.full(len(moved), -1.0)
        v = np.full(len(moved), -1.0)
        u[front] = intr.fx * moved[front, 0] / moved[front, 2] + intr.cx
        v[front] = intr.fy * moved[front, 1] / moved[front, 2] + intr.cy
        keep = front & (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)
        if occlusion and self.zbuf is not None:
            idx = np.flatnonzero(keep)
            ui = np.floor(u[idx] + 0.5).astype(int)
            vi = np.floor(v[idx] + 0.5).astype(int)
            z = moved[idx, 2]
            keep[idx] = z <= self.zbuf[vi, ui] * 1.02 + self.occlusion_margin
        return keep

    def associate(self, pose: RigidTransform, occlusion: bool = True) -> Pairs:
        moved = pose.apply(self.lidar)
        sel = self.visible(moved, occlusion)
        if not np.any(sel):
            raise ValueError("no LiDAR point projects into the image at this pose")
        d_pq, c_pq = self.cam_index.query(moved[sel])
        back = (self.cam - pose.translation) @ pose.rotation
        d_qp, c_qp = self.lidar_index.query(back)
        return Pairs(self.lidar[sel], self.cam[c_pq], self.lidar[c_qp], self.cam, d_pq, d_qp)


def chamfer_residuals(pose: RigidTransform, pairs: Pairs, params: ChamferParams) -> np.ndarray:
    """Stacked residuals whose squared norm is the Chamfer distance for fixed pairs."""
    wa = np.sqrt(params.alpha / len(pairs.fwd_src))
    wb = np.sqrt(params.beta / len(pairs.rev_dst))
    fwd = wa * (pose.apply(pairs.fwd_src) - pairs.fwd_dst)
    rev = wb * (pairs.rev_dst - pose.apply(pairs.rev_src))
    return np.concatenate([fwd.ravel(), rev.ravel()])


def chamfer_jacobian(pose: RigidTransform, pairs: Pairs, params: ChamferParams) -> np.ndarray:
    """Analytic Jacobian of :func:`chamfer_residuals` w.r.t. the 6-vector increment."""
    r = pose.rotation
    wa = np.sqrt(params.alpha / len(pairs.fwd_src))
    wb = np.sqrt(params.beta / len(pairs.rev_dst))

    def block(p, w):
        j = np.empty((len(p), 3, 6))
        j[:, :, :3] = -np.einsum("ij,njk->nik", r, skew_rows(p))
        j[:, :, 3:] = r
        return w * j

    jf = block(pairs.fwd_src, wa)
    jr = -block(pairs.rev_src, wb)
    return np.concatenate([jf.reshape(-1, 6), jr.reshape(-1, 6)])


def _point_normal_equations(pose: RigidTransform, src: np.ndarray, dst: np.ndarray, w2: float):
    """``J^T J`` and ``J^T r`` for residuals ``w (T src - dst)`` without forming ``J``.

    With ``J_i = w R [-[p]x, I]`` the rotation cancels in ``J^T J``, leaving sums
    of ``|p|^2 I - p p^T`` and ``[p]x``; a residual sign flip leaves both unchanged.
    """
    e = (pose.apply(src) - dst) @ pose.rotation   # R^T (R p + t - q)
    sp = src.sum(0)
    h = np.zeros((6, 6))
    h[:3, :3] = np.eye(3) * np.einsum("ij,ij->", src, src) - src.T @ src
    h[:3, 3:] = -skew_rows(sp[None])[0].T
    h[3:, :3] = h[:3, 3:].T
    h[3:, 3:] = np.eye(3) * len(src)
    g = np.concatenate([np.cross(src, e).sum(0), e.sum(0)])
    return w2 * h, w2 * g


def euler_jacobian(pose: RigidTransform, eps: float = 1e-6) -> np.ndarray:
    """3x3 derivative of the Euler vector (degrees) w.r.t. the rotation increment."""
    out = np.empty((3, 3))
    for k in range(3):
        d = np.zeros(6)
        d[k] = eps
        hi = retract(pose, d).rotation
        d[k] = -eps
        lo = retract(pose, d).rotation
        out[:, k] = euler_difference(hi, lo) / (2 * eps)
    return out


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 100
    tol: float = 1e-8
    damping_init: float = 1e-4
    alpha: float = 0.5
    beta: float = 0.5
    subsample_cap: int = 20000
    seed: int = 0
    damping_max: float = 1e10
    cond_max: float = 1e12
    occlusion_margin: float = 0.25  # meters; inf disables the camera occlusion test
    max_extrapolation: int = 1
    warmup_tol: float = 1e-4      # looser stop for the occlusion-blind first stage

    @property
    def chamfer(self) -> ChamferParams:
        return ChamferParams(self.alpha, self.beta)

    @classmethod
    def from_mapping(cls, values: dict) -> "OptimizerConfig":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                continue
            kw[k] = int(v) if known[k] == "int" else float(v)
        return cls(**kw)

    def with_(self, **kw) -> "OptimizerConfig":
        return replace(self, **kw)


class RefineResult(NamedTuple):
    """``trace`` holds the accepted losses of the final stage; ``warmup_trace``
    those of the occlusion-blind first stage (empty when there is none)."""

    pose: RigidTransform
    loss: LossBreakdown
    trace: list
    status: str          # "converged", "stalled" or "max_iters"
    iterations: int
    warmup_trace: list = []


def _subsample(points: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if cap and len(points) > cap:
        idx = np.sort(rng.choice(len(points), cap, replace=False))
        return points[idx]
    return points


class _Problem:
    """Sum of per-frame Chamfer terms plus the optional prior terms, for one pose."""

    def __init__(self, frames: Sequence[Frame], params: ChamferParams,
                 init_guess: RigidTransform | None, external_eval: RigidTransform | None,
                 eval_scale: float, occlusion: bool = True):
        self.occlusion = occlusion
        self.frames = frames
        self.params = params
        self.init_guess = init_guess
        self.external_eval = external_eval
        self.eval_scale = eval_scale

    def evaluate(self, pose: RigidTransform):
        assoc = [f.associate(pose, self.occlusion) for f in self.frames]
        l_cd = sum(a.chamfer(self.params) for a in assoc)
        l_ini = 0.0 if self.init_guess is None else float(np.linalg.norm(self.init_guess.translation - pose.translation))
        l_eva = 0.0 if self.external_eval is None else eval_loss(pose, self.external_eval, self.eval_scale)
        loss = LossBreakdown(l_cd=float(l_cd), l_t_ini=l_ini, l_eva=l_eva, total=float(l_cd) + l_ini + l_eva)
        return loss, assoc

    def normal_equations(self, pose: RigidTransform, assoc):
        h = np.zeros((6, 6))
        g = np.zeros(6)
        for pairs in assoc:
            for src, dst, w2 in ((pairs.fwd_src, pairs.fwd_dst, self.params.alpha / len(pairs.fwd_src)),
                                 (pairs.rev_src, pairs.rev_dst, self.params.beta / len(pairs.rev_dst))):
                hp, gp = _point_normal_equations(pose, src, dst, w2)
                h += hp
                g += gp
        if self.init_guess is not None:
            j = np.zeros((3, 6))
            j[:, 3:] = pose.rotation
            r = pose.translation - self.init_guess.translation
            h += j.T @ j
            g += j.T @ r
        if self.external_eval is not None:
            je = np.zeros((6, 6))
            je[:3, :3] = self.eval_scale * euler_jacobian(pose)
            je[3:, 3:] = pose.rotation
            re = np.concatenate([
                self.eval_scale * euler_difference(pose.rotation, self.external_eval.rotation),
                pose.translation - self.external_eval.translation,
            ])
            h += je.T @ je
            g += je.T @ re
        return h, g


def _solve(problem: _Problem, init: RigidTransform, config: OptimizerConfig) -> RefineResult:
    pose = init
    loss, assoc = problem.evaluate(pose)
    trace = [loss.total]
    lam = config.damping_init
    status, it = "max_iters", 0
    for it in range(1, config.max_iters + 1):
        if loss.total == 0.0:
            status = "converged"
            it -= 1
            break
        h, g = problem.normal_equations(pose, assoc)
        diag = np.diag(h).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        accepted = False
        while lam <= config.damping_max:
            a = h + lam * np.diag(diag)
            if np.linalg.cond(a) > config.cond_max:
                lam *= 10
                continue
            step = -np.linalg.solve(a, g)
            cand = retract(pose, step)
            cand_loss, cand_assoc = problem.evaluate(cand)
            if cand_loss.total < loss.total:
                accepted = True
                break
            lam *= 10
        if accepted:
            # fixed-pair steps undershoot when the cloud slides along a weakly
            # constrained direction; keep doubling while the true loss drops
            for k in range(config.max_extrapolation):
                far = retract(pose, step * 2.0 ** (k + 1))
                far_loss, far_assoc = problem.evaluate(far)
                if far_loss.total >= cand_loss.total:
                    break
                cand, cand_loss, cand_assoc = far, far_loss, far_assoc
        if not accepted:
            if np.linalg.cond(h + config.damping_max * np.diag(diag)) > config.cond_max:
                raise ConvergenceError("normal equations stay degenerate at maximum damping")
            # no damped step lowers the loss: the pose minimizes the fixed-pair
            # model and re-association would reproduce the same pairs
            status = "stalled"
            break
        rel = (loss.total - cand_loss.total) / max(loss.total, 1e-300)
        pose, loss, assoc = cand, cand_loss, cand_assoc
        trace.append(loss.total)
        lam = max(lam / 10, 1e-12)
        if rel < config.tol:
            status = "converged"
            break
    log.debug("refine: %s after %d iterations, loss %.6g", status, it, loss.total)
    return RefineResult(pose, loss, trace, status, it)


def refine_pose(lidar_cloud, cam_cloud, init: RigidTransform, config: OptimizerConfig = OptimizerConfig(),
                init_guess: RigidTransform | None = None, external_eval: RigidTransform | None = None,
                intrinsics: CameraIntrinsics | None = None, eval_scale: float = EVAL_SCALE) -> RefineResult:
    """Minimize Chamfer distance (+ optional prior terms) over the LiDAR-to-camera pose.

    ``init`` is the starting point. ``init_guess`` adds the initial-guess
    translation term and ``external_eval`` the evaluator term; both are off by
    default. ``intrinsics`` restricts the LiDAR side to points that project into
    the image (recommended whenever the LiDAR sees more than the camera).

    Returns the best pose found, its loss breakdown and the trace of accepted
    total losses, which is nonincreasing.
    """
    return refine_pose_shared([(lidar_cloud, cam_cloud)], init, config, init_guess, external_eval,
                              intrinsics, eval_scale)


def refine_pose_shared(pairs: Sequence[tuple], init: RigidTransform, config: OptimizerConfig = OptimizerConfig(),
                       init_guess: RigidTransform | None = None, external_eval: RigidTransform | None = None,
                       intrinsics: CameraIntrinsics | None = None, eval_scale: float = EVAL_SCALE) -> RefineResult:
    """One pose shared by several frames; the objective is the sum of per-frame losses."""
    rng = np.random.default_rng(config.seed)
    frames = []
    for lidar, cam in pairs:
        lp, cp = _pts(lidar), _pts(cam)
        if len(lp) < 10 or len(cp) < 10:
            raise ValueError("each cloud needs at least 10 points")
        frames.append(Frame(_subsample(lp, config.subsample_cap, rng), _subsample(cp, config.subsample_cap, rng),
                            intrinsics, config.occlusion_margin))
    gated = intrinsics is not None and np.isfinite(config.occlusion_margin)
    if not gated:
        return _solve(_Problem(frames, config.chamfer, init_guess, external_eval, eval_scale, False), init, config)
    # The occluded set moves with the pose, which creates spurious minima far
    # from the answer, so converge without the test first, then refine with it.
    warm = _solve(_Problem(frames, config.chamfer, init_guess, external_eval, eval_scale, False), init,
                  config.with_(tol=config.warmup_tol))
    final = _solve(_Problem(frames, config.chamfer, init_guess, external_eval, eval_scale, True), warm.pose, config)
    return final._replace(iterations=warm.iterations + final.iterations, warmup_trace=warm.trace)
