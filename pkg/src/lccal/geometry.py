"""Rigid-body math for extrinsic calibration.

Rotations are stored as 3x3 matrices. Euler angles follow the intrinsic
Z-Y-X convention (yaw about z first, then pitch about the new y, then roll
about the new x), in degrees. Quaternions are ``(w, x, y, z)`` arrays and only
appear at the rotation-averaging boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-9
GIMBAL_PITCH_DEG = 89.0
DEFAULT_AXIS_WEIGHTS = (0.6, 0.2, 0.2)


class DegenerateError(ValueError):
    """Raised when an input distribution has no well-defined answer."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(m: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return (np.linalg.norm(m.T @ m - np.eye(3)) <= tol
            and abs(np.linalg.det(m) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation mapping points from a source frame to a target frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        if not is_rotation(r):
            raise ValueError("rotation is not special-orthogonal within tolerance")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m, orthonormalize: bool = False) -> "RigidTransform":
        """Build from a 4x4 homogeneous or 3x4 ``[R | t]`` matrix."""
        m = np.asarray(m, dtype=float)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected 3x4 or 4x4 matrix, got {m.shape}")
        r = m[:3, :3]
        if orthonormalize:
            r = project_to_so3(r)
        return cls(r, m[:3, 3])

    @classmethod
    def from_euler(cls, yaw: float, pitch: float, roll: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(euler_to_matrix(EulerAngles(yaw, pitch, roll)), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def euler(self) -> "EulerAngles":
        return matrix_to_euler(self.rotation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        e = self.euler()
        return (f"RigidTransform(ypr=({e.yaw:.4f}, {e.pitch:.4f}, {e.roll:.4f}) deg, "
                f"t={np.array2string(self.translation, precision=4)})")


class EulerAngles(NamedTuple):
    yaw: float
    pitch: float
    roll: float

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])


def euler_to_matrix(e: EulerAngles | Sequence[float]) -> np.ndarray:
    yaw, pitch, roll = e
    return Rotation.from_euler("ZYX", [yaw, pitch, roll], degrees=True).as_matrix()


def matrix_to_euler(r: np.ndarray) -> EulerAngles:
    """Yaw/pitch/roll in degrees. Undefined (but still returned) in gimbal lock."""
    r = np.asarray(r, dtype=float)
    # closed form for R = Rz(yaw) Ry(pitch) Rx(roll); avoids scipy's gimbal warnings
    pitch = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    yaw = np.arctan2(r[1, 0], r[0, 0])
    roll = np.arctan2(r[2, 1], r[2, 2])
    return EulerAngles(*np.degrees([yaw, pitch, roll]).tolist())


def in_gimbal_lock(r: np.ndarray) -> bool:
    return abs(matrix_to_euler(r).pitch) >= GIMBAL_PITCH_DEG


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    r = project_to_so3(a.rotation @ b.rotation)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def relative_pose(cam: RigidTransform, lidar: RigidTransform) -> RigidTransform:
    """Transform taking the lidar sensor frame to the camera sensor frame.

    Both inputs map a shared reference frame into the respective sensor, so the
    result is ``cam ∘ lidar⁻¹``.
    """
    return compose(cam, invert(lidar))


def wrap_degrees(a):
    """Wrap angles into [-180, 180)."""
    return (np.asarray(a, dtype=float) + 180.0) % 360.0 - 180.0


def euler_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-axis wrapped difference of the Euler angles of two rotation matrices."""
    return wrap_degrees(matrix_to_euler(a).as_array() - matrix_to_euler(b).as_array())


class PoseError(NamedTuple):
    rotation_deg: float
    translation_m: float
    degenerate: bool = False


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> PoseError:
    """Euler-vector difference norm and translation difference norm.

    ``degenerate`` is set when either rotation is within 1 degree of gimbal lock,
    where the Euler vector (and hence the rotation error) is ill-defined.
    """
    e_r = float(np.linalg.norm(euler_difference(estimate.rotation, truth.rotation)))
    e_t = float(np.linalg.norm(estimate.translation - truth.translation))
    degenerate = in_gimbal_lock(estimate.rotation) or in_gimbal_lock(truth.rotation)
    return PoseError(e_r, e_t, degenerate)


# ---------------------------------------------------------------------------
# quaternions

def canonical_quaternion(q: np.ndarray) -> np.ndarray:
    """Flip sign so that the first nonzero component (normally w) is positive.

    Row-wise for an (N, 4) array. Half-turns have w = 0, hence the fallback.
    """
    q = np.array(q, dtype=float)
    rows = np.atleast_2d(q)
    lead = rows[np.arange(len(rows)), np.argmax(rows != 0, axis=1)]
    rows[lead < 0] *= -1.0
    return rows[0] if q.ndim == 1 else rows


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(np.asarray(r, dtype=float)).as_quat()
    return canonical_quaternion(np.array([w, x, y, z]))


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def average_quaternions(quats, weights=None, gap_tol: float = 1e-12) -> np.ndarray:
    """Weighted average of unit quaternions via the dominant eigenvector.

    Weights are normalized to sum to one and each quaternion is scaled by the
    square root of its weight before forming ``C = Q Qᵀ``. The returned
    quaternion is unit-norm and canonical (see ``canonical_quaternion``).

    Raises ``DegenerateError`` when the weights are all zero or the top two
    eigenvalues of ``C`` are closer than ``gap_tol`` (e.g. two antipodal-ish
    rotations with equal weight).
    """
    q = np.atleast_2d(np.asarray(quats, dtype=float))
    if q.ndim != 2 or q.shape[1] != 4 or len(q) == 0:
        raise ValueError("quats must be a non-empty (N, 4) array")
    w = np.ones(len(q)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (len(q),):
        raise ValueError("need one weight per quaternion")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateError("all weights are zero")
    w = w / total

    canon = canonical_quaternion(q)
    active = canon[w > 0]
    if np.all(active == active[0]):
        return active[0].copy()

    qt = np.sqrt(w)[:, None] * q
    c = qt.T @ qt
    vals, vecs = np.linalg.eigh(c)
    if vals[-1] - vals[-2] < gap_tol:
        raise DegenerateError("top eigenvalue is not separated; average is ambiguous")
    mean = vecs[:, -1]
    mean = mean / np.linalg.norm(mean)
    return canonical_quaternion(mean)


# ---------------------------------------------------------------------------
# perturbations

@dataclass(frozen=True)
class MiscalibrationRange:
    """Symmetric bound on rotation (degrees) and translation (meters) errors.

    Each bound is distributed over the three axes with ``axis_weights``; with the
    default weights a (5 deg, 0.5 m) range becomes (3, 1, 1) deg and
    (0.3, 0.1, 0.1) m.
    """

    rot_bound: float = 0.0
    trans_bound: float = 0.0
    axis_weights: tuple = DEFAULT_AXIS_WEIGHTS

    def __post_init__(self):
        if self.rot_bound < 0 or self.trans_bound < 0:
            raise ValueError("bounds must be nonnegative")
        w = np.asarray(self.axis_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("axis_weights must be 3 nonnegative reals summing to 1")
        object.__setattr__(self, "axis_weights", tuple(float(x) for x in w))

    @classmethod
    def uniform_axes(cls, rot_bound: float, trans_bound: float) -> "MiscalibrationRange":
        """Equal thirds: a (15 deg, 0.9 m) range gives +-5 deg and +-0.3 m on every axis."""
        return cls(rot_bound, trans_bound, (1 / 3, 1 / 3, 1 / 3))

    def rotation_bounds(self) -> np.ndarray:
        """Per-axis (yaw, pitch, roll) bounds in degrees."""
        return self.rot_bound * np.asarray(self.axis_weights)

    def translation_bounds(self) -> np.ndarray:
        """Per-axis (x, y, z) bounds in meters."""
        return self.trans_bound * np.asarray(self.axis_weights)

    def is_zero(self) -> bool:
        return self.rot_bound == 0 and self.trans_bound == 0


def sample_perturbation(rng_range: MiscalibrationRange, rng_seed=None) -> RigidTransform:
    """Draw a random transform inside ``rng_range``.

    Yaw/pitch/roll and x/y/z are each uniform in ``[-b_k, b_k]``. The seed may be
    an int or an existing ``numpy.random.Generator`` (consumed in place).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    rb = rng_range.rotation_bounds()
    tb = rng_range.translation_bounds()
    angles = rng.uniform(-1.0, 1.0, 3) * rb
    trans = rng.uniform(-1.0, 1.0, 3) * tb
    if rng_range.is_zero():
        return RigidTransform()
    return RigidTransform(euler_to_matrix(angles), trans)


# ---------------------------------------------------------------------------
# pose files: one transform per line, 12 reals, row-major [R | t]

def format_pose(t: RigidTransform) -> str:
    m = t.matrix()[:3, :]
    return " ".join(repr(float(v)) for v in m.reshape(-1))


def parse_pose(line: str, tol: float = 1e-4) -> RigidTransform:
    vals = line.split()
    if len(vals) != 12:
        raise ValueError(f"pose line needs 12 values, got {len(vals)}")
    m = np.array([float(v) for v in vals]).reshape(3, 4)
    r = m[:, :3]
    if not is_rotation(r):
        # calibration files commonly carry ~1e-6 rounding; anything worse is rejected
        if not is_rotation(r, tol):
            raise ValueError("pose rotation is not orthonormal")
        r = project_to_so3(r)
    return RigidTransform(r, m[:, 3])


def write_poses(path, poses: Sequence[RigidTransform]) -> None:
    Path(path).write_text("".join(format_pose(p) + "\n" for p in poses))


def read_poses(path) -> list[RigidTransform]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            out.append(parse_pose(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
    return out


def read_pose(path) -> RigidTransform:
    poses = read_poses(path)
    if len(poses) != 1:
        raise ValueError(f"{path}: expected exactly one pose, found {len(poses)}")
    return poses[0]
