"""SO(3)/SE(3)/Sim(3) kernel.

Rotations are Hamilton unit quaternions stored ``(x, y, z, w)``. Twists are
6-vectors ordered ``(rotation, translation)``. Every batch function accepts
arbitrary leading dimensions so the same code serves single elements and
dense per-pixel fields.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-6
# principal branch of the logarithm stops this far short of pi
PI_MARGIN = 1e-6
RENORM_TOL = 8 * np.finfo(np.float64).eps


class BranchAmbiguityError(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def hat(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


# ---------------------------------------------------------------------------
# quaternion batch kernels
# ---------------------------------------------------------------------------


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bx, by, bz, bw = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([-q[..., :3], q[..., 3:]], axis=-1)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    # explicit sum keeps single and batched evaluation bit-identical
    n = np.sqrt(q[..., 0:1] ** 2 + q[..., 1:2] ** 2 + q[..., 2:3] ** 2 + q[..., 3:4] ** 2)
    # already-unit quaternions pass through untouched so identities stay exact
    return np.where(np.abs(n - 1.0) > RENORM_TOL, q / n, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    x, y, z, w = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (yy + zz)
    R[..., 0, 1] = 2 * (xy - wz)
    R[..., 0, 2] = 2 * (xz + wy)
    R[..., 1, 0] = 2 * (xy + wz)
    R[..., 1, 1] = 1 - 2 * (xx + zz)
    R[..., 1, 2] = 2 * (yz - wx)
    R[..., 2, 0] = 2 * (xz - wy)
    R[..., 2, 1] = 2 * (yz + wx)
    R[..., 2, 2] = 1 - 2 * (xx + yy)
    return R


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method, batched."""
    R = np.asarray(R, dtype=np.float64)
    shape = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    q = np.empty((R.shape[0], 4))
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([diag, tr[:, None]], axis=1), axis=1)
    for k in range(4):
        m = choice == k
        if not np.any(m):
            continue
        r = R[m]
        if k == 3:
            s = 2.0 * np.sqrt(1.0 + tr[m])
            q[m] = np.stack(
                [
                    (r[:, 2, 1] - r[:, 1, 2]) / s,
                    (r[:, 0, 2] - r[:, 2, 0]) / s,
                    (r[:, 1, 0] - r[:, 0, 1]) / s,
                    0.25 * s,
                ],
                axis=1,
            )
        else:
            i, j, l = k, (k + 1) % 3, (k + 2) % 3
            s = 2.0 * np.sqrt(1.0 + r[:, i, i] - r[:, j, j] - r[:, l, l])
            v = np.empty((r.shape[0], 4))
            v[:, i] = 0.25 * s
            v[:, j] = (r[:, j, i] + r[:, i, j]) / s
            v[:, l] = (r[:, l, i] + r[:, i, l]) / s
            v[:, 3] = (r[:, l, j] - r[:, j, l]) / s
            q[m] = v
    q = quat_normalize(q)
    q[q[:, 3] < 0] *= -1
    return q.reshape(shape + (4,))


def quat_rotate(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Rotate points ``p`` by quaternions ``q`` (broadcasting)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    u = q[..., :3]
    w = q[..., 3:]
    t = 2.0 * np.cross(u, p)
    return p + w * t + np.cross(u, t)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation vector -> unit quaternion."""
    omega = np.asarray(omega, dtype=np.float64)
    theta2 = np.sum(omega * omega, axis=-1, keepdims=True)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half_sinc = np.where(small, 0.5 - theta2 / 48.0, np.sin(0.5 * safe) / safe)
    w = np.where(small, 1.0 - theta2 / 8.0, np.cos(0.5 * safe))
    return np.concatenate([half_sinc * omega, w], axis=-1)


def so3_log(q: np.ndarray, check_branch: bool = True) -> np.ndarray:
    """Unit quaternion -> rotation vector on the principal branch."""
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., 3:] < 0, -q, q)
    v = q[..., :3]
    w = q[..., 3]
    n = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(n, w)
    if check_branch and np.any(theta >= np.pi - PI_MARGIN):
        raise BranchAmbiguityError("rotation angle at or near pi; logarithm is ambiguous")
    small = n < 1e-8
    safe_n = np.where(small, 1.0, n)
    # small n implies w ~ 1 on the principal branch
    safe_w = np.where(small, w, 1.0)
    scale = np.where(small, 2.0 / safe_w * (1.0 - n * n / (3.0 * safe_w * safe_w)), theta / safe_n)
    return scale[..., None] * v


def _v_coeffs(theta2: np.ndarray):
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    # 1 - cos written as 2 sin^2(theta/2) to avoid cancellation
    a = np.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, 2.0 * (np.sin(0.5 * safe) / safe) ** 2)
    b = np.where(
        small,
        1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        (safe - np.sin(safe)) / (safe * safe * safe),
    )
    return a, b


def left_jacobian(omega: np.ndarray) -> np.ndarray:
    """SO(3) left Jacobian, the V matrix of the SE(3) exponential."""
    omega = np.asarray(omega, dtype=np.float64)
    a, b = _v_coeffs(np.sum(omega * omega, axis=-1))
    K = hat(omega)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    theta2 = np.sum(omega * omega, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0,
        (1.0 - 0.5 * safe / np.tan(0.5 * safe)) / (safe * safe),
    )
    K = hat(omega)
    return np.eye(3) - 0.5 * K + c[..., None, None] * (K @ K)


def se3_exp(xi: np.ndarray):
    """Twist ``(omega, rho)`` -> (quaternion, translation)."""
    xi = np.asarray(xi, dtype=np.float64)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist must be finite")
    omega, rho = xi[..., :3], xi[..., 3:]
    q = so3_exp(omega)
    t = np.einsum("...ij,...j->...i", left_jacobian(omega), rho)
    return q, t


def se3_log(q: np.ndarray, t: np.ndarray, check_branch: bool = True) -> np.ndarray:
    omega = so3_log(q, check_branch=check_branch)
    rho = np.einsum("...ij,...j->...i", left_jacobian_inv(omega), np.asarray(t, dtype=np.float64))
    return np.concatenate([omega, rho], axis=-1)


def se3_compose(qa, ta, qb, tb):
    """(qa, ta) o (qb, tb) with quaternion renormalisation."""
    q = quat_normalize(quat_mul(qa, qb))
    t = quat_rotate(qa, tb) + np.asarray(ta, dtype=np.float64)
    return q, t


def se3_inverse(q, t):
    qi = quat_conj(q)
    return qi, -quat_rotate(qi, t)


def adjoint(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    """6x6 adjoint for twists ordered (omega, rho)."""
    R = quat_to_matrix(q)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = hat(t) @ R
    return out


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Twist:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(np.reshape(self.rotation, 3)))
        object.__setattr__(self, "translation", _readonly(np.reshape(self.translation, 3)))

    @classmethod
    def from_vector(cls, xi) -> Twist:
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    def __neg__(self) -> Twist:
        return Twist(-self.rotation, -self.translation)

    def __repr__(self) -> str:
        return f"Twist(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3); acts on points as ``R p + t``."""

    rotation: np.ndarray  # (x, y, z, w)
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("transform components must be finite")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-9:
            q = q / n
        object.__setattr__(self, "rotation", _readonly(q))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> RigidTransform:
        M = np.asarray(M, dtype=np.float64)
        return cls(quat_from_matrix(M[:3, :3]), M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), t)

    @classmethod
    def from_rotvec(cls, omega, t=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(so3_exp(omega), t)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> RigidTransform:
        return RigidTransform(*se3_inverse(self.rotation, self.translation))

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def act(self, p) -> np.ndarray:
        return quat_rotate(self.rotation, p) + self.translation

    def log(self) -> Twist:
        return log_se3(self)

    def angle(self) -> float:
        q = self.rotation
        return float(2.0 * np.arctan2(np.linalg.norm(q[:3]), abs(q[3])))

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Similarity:
    """Element of Sim(3); acts on points as ``s R p + t``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", _readonly(quat_normalize(np.reshape(self.rotation, 4))))
        object.__setattr__(self, "translation", _readonly(np.reshape(self.translation, 3)))

    @classmethod
    def identity(cls) -> Similarity:
        return cls(1.0, np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @property
    def rigid(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def act(self, p) -> np.ndarray:
        return self.scale * quat_rotate(self.rotation, p) + self.translation

    def apply_to_pose(self, pose: RigidTransform) -> RigidTransform:
        """Map a world-from-camera pose into the aligned world frame."""
        q, _ = se3_compose(self.rotation, self.translation, pose.rotation, pose.translation)
        return RigidTransform(q, self.act(pose.translation))


# ---------------------------------------------------------------------------
# group operations
# ---------------------------------------------------------------------------


def exp_se3(xi) -> RigidTransform:
    v = xi.vector if isinstance(xi, Twist) else np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(v)):
        raise ValueError("twist must be finite")
    return RigidTransform(*se3_exp(v))


def log_se3(T: RigidTransform) -> Twist:
    return Twist.from_vector(se3_log(T.rotation, T.translation))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return RigidTransform(*se3_compose(a.rotation, a.translation, b.rotation, b.translation))


def inverse(a: RigidTransform) -> RigidTransform:
    return a.inverse()


def act(a: RigidTransform, p) -> np.ndarray:
    return a.act(p)


def pose_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation error [m], rotation angle [rad]) of ``a^-1 b``."""
    d = compose(a.inverse(), b)
    return float(np.linalg.norm(d.translation)), d.angle()


# ---------------------------------------------------------------------------
# dense fields
# ---------------------------------------------------------------------------


class TwistField:
    """Row-major per-pixel twists, ``data`` of shape (height*width, 6)."""

    def __init__(self, width: int, height: int, data):
        data = np.asarray(data, dtype=np.float64).reshape(height * width, 6)
        self.width = int(width)
        self.height = int(height)
        self.data = _readonly(data)

    @classmethod
    def zeros(cls, width: int, height: int) -> TwistField:
        return cls(width, height, np.zeros((height * width, 6)))

    def __getitem__(self, idx) -> Twist:
        return Twist.from_vector(self.data[self._flat(idx)])

    def _flat(self, idx) -> int:
        if isinstance(idx, tuple):
            v, u = idx
            return int(v) * self.width + int(u)
        return int(idx)

    def __neg__(self) -> TwistField:
        return TwistField(self.width, self.height, -self.data)

    def __len__(self) -> int:
        return self.width * self.height


class TransformField:
    """Row-major per-pixel SE(3) elements.

    ``quats`` has shape (height*width, 4) and ``trans`` (height*width, 3).
    Index with a flat pixel index or ``(v, u)``.
    """

    def __init__(self, width: int, height: int, quats, trans):
        n = int(width) * int(height)
        quats = np.asarray(quats, dtype=np.float64).reshape(n, 4)
        trans = np.asarray(trans, dtype=np.float64).reshape(n, 3)
        self.width = int(width)
        self.height = int(height)
        self.quats = _readonly(quats)
        self.trans = _readonly(trans)

    @classmethod
    def identity(cls, width: int, height: int) -> TransformField:
        return cls.constant(RigidTransform.identity(), width, height)

    @classmethod
    def constant(cls, T: RigidTransform, width: int, height: int) -> TransformField:
        n = width * height
        return cls(width, height, np.tile(T.rotation, (n, 1)), np.tile(T.translation, (n, 1)))

    @classmethod
    def from_twists(cls, twists: TwistField) -> TransformField:
        q, t = se3_exp(twists.data)
        return cls(twists.width, twists.height, q, t)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __len__(self) -> int:
        return self.width * self.height

    def __getitem__(self, idx) -> RigidTransform:
        i = self._flat(idx)
        return RigidTransform(self.quats[i], self.trans[i])

    def _flat(self, idx) -> int:
        if isinstance(idx, tuple):
            v, u = idx
            return int(v) * self.width + int(u)
        return int(idx)

    def _like(self, q, t) -> TransformField:
        return TransformField(self.width, self.height, q, t)

    def act(self, points) -> np.ndarray:
        """Apply pixel ``i``'s transform to ``points[i]``; points (..., 3) flattenable to (n, 3)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return quat_rotate(self.quats, p) + self.trans

    def inverse(self) -> TransformField:
        return self._like(*se3_inverse(self.quats, self.trans))

    def left_compose(self, T: RigidTransform) -> TransformField:
        """``T o field[u]`` for every pixel."""
        return self._like(*se3_compose(T.rotation, T.translation, self.quats, self.trans))

    def compose(self, other: TransformField) -> TransformField:
        self._check_same(other)
        return self._like(*se3_compose(self.quats, self.trans, other.quats, other.trans))

    def retract(self, twists: TwistField) -> TransformField:
        """Scene-flow update ``T[u] exp(t[u])``."""
        self._check_same(twists)
        dq, dt = se3_exp(twists.data)
        return self._like(*se3_compose(self.quats, self.trans, dq, dt))

    def left_retract(self, twists) -> TransformField:
        """``exp(d[u]) T[u]``; ``twists`` is a TwistField or an (n, 6) array."""
        d = twists.data if isinstance(twists, TwistField) else np.asarray(twists, dtype=np.float64)
        dq, dt = se3_exp(d.reshape(-1, 6))
        return self._like(*se3_compose(dq, dt, self.quats, self.trans))

    def log(self) -> TwistField:
        return TwistField(self.width, self.height, se3_log(self.quats, self.trans))

    def _check_same(self, other) -> None:
        if (other.width, other.height) != (self.width, self.height):
            raise ValueError(
                f"field size mismatch: {self.width}x{self.height} vs {other.width}x{other.height}"
            )
