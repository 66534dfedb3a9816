"""Rigid transforms with frame bookkeeping, the 6-D rotation encoding, and the
pose chain that turns predicted relative poses into end-effector targets.

Frame tags are ``(parent, child)`` pairs over the letters used throughout the
package: ``c`` camera, ``b`` robot base, ``s`` source (grasped peg), ``t``
target (socket), ``e`` end-effector.  ``Pose(frame=("c", "s"))`` is the pose of
the source object expressed in the camera frame.  Translations are millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FRAMES = frozenset("cbste")

# Drift beyond this triggers SVD re-projection after composition.
ORTHO_DRIFT_TOL = 1e-12
# Inputs to rot_to_r6d farther than this from SO(3) are rejected.
ORTHO_INPUT_TOL = 1e-6
# Minimum angle between the two R6D columns.
COLINEAR_TOL = 1e-6


class FrameMismatchError(ValueError):
    """Raised when two poses are combined across incompatible frames."""


def project_to_so3(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def _check_tag(frame: tuple[str, str]) -> tuple[str, str]:
    if len(frame) != 2 or not set(frame) <= FRAMES:
        raise ValueError(f"invalid frame tag {frame!r}; letters must come from {sorted(FRAMES)}")
    return (frame[0], frame[1])


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform ``T_parent^child``."""

    rotation: np.ndarray
    translation: np.ndarray
    frame: tuple[str, str] = field(default=("c", "s"))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "frame", _check_tag(tuple(self.frame)))

    @classmethod
    def identity(cls, frame=("c", "c")) -> "Pose":
        return cls(np.eye(3), np.zeros(3), frame)

    @classmethod
    def from_matrix(cls, T: np.ndarray, frame=("c", "s")) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3], frame)

    @classmethod
    def from_row12(cls, row: Sequence[float], frame=("c", "s")) -> "Pose":
        """Inverse of :meth:`to_row12` (9 rotation entries row-major, then translation)."""
        row = np.asarray(row, dtype=float).reshape(12)
        return cls(row[:9].reshape(3, 3), row[9:], frame)

    def to_row12(self) -> np.ndarray:
        return np.concatenate([self.rotation.reshape(9), self.translation])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def retag(self, frame: tuple[str, str]) -> "Pose":
        return Pose(self.rotation, self.translation, frame)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return (
            self.frame == other.frame
            and np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        t = np.array2string(self.translation, precision=4)
        return f"Pose({self.frame[0]}->{self.frame[1]}, t={t})"


def compose(a: Pose, b: Pose) -> Pose:
    """``a · b``; requires ``a = T_X^Y`` and ``b = T_Y^Z`` and returns ``T_X^Z``."""
    if a.frame[1] != b.frame[0]:
        raise FrameMismatchError(
            f"cannot compose {a.frame[0]}->{a.frame[1]} with {b.frame[0]}->{b.frame[1]}"
        )
    R = a.rotation @ b.rotation
    if orthonormality_error(R) > ORTHO_DRIFT_TOL:
        R = project_to_so3(R)
    t = a.rotation @ b.translation + a.translation
    return Pose(R, t, (a.frame[0], b.frame[1]))


def inverse(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation, (a.frame[1], a.frame[0]))


def relative_pose(t_c_t: Pose, t_c_s: Pose) -> Pose:
    """Source pose in the target frame, ``T_t^s = (T_c^t)^-1 · T_c^s``."""
    if t_c_t.frame[0] != t_c_s.frame[0]:
        raise FrameMismatchError(
            f"poses do not share a parent frame: {t_c_t.frame} vs {t_c_s.frame}"
        )
    return compose(inverse(t_c_t), t_c_s)


# ---------------------------------------------------------------------------
# 6-D rotation encoding
# ---------------------------------------------------------------------------


def rot_to_r6d(R: np.ndarray) -> np.ndarray:
    """First two columns of ``R`` stacked column-major, shape ``(..., 6)``."""
    R = np.asarray(R, dtype=float)
    RtR = np.swapaxes(R, -1, -2) @ R
    err = np.max(np.abs(RtR - np.eye(3)))
    if err > ORTHO_INPUT_TOL:
        raise ValueError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    if np.any(np.linalg.det(R) < 0):
        raise ValueError("matrix is a reflection (det < 0)")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def r6d_to_rot(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt reconstruction; accepts ``(..., 6)`` and returns ``(..., 3, 3)``."""
    r = np.asarray(r, dtype=float)
    a1, a2 = r[..., :3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(a2, axis=-1, keepdims=True)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("R6D column has zero length")
    # sin of the angle between the columns
    sin_angle = np.linalg.norm(np.cross(a1, a2), axis=-1) / (n1[..., 0] * n2[..., 0])
    if np.any(sin_angle < COLINEAR_TOL):
        raise ValueError("R6D columns are colinear")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = u2 / np.linalg.norm(u2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def encode_action(pose: Pose, scale=1.0) -> np.ndarray:
    """Pose -> 9-vector ``(t / scale, r6d)``."""
    return np.concatenate([pose.translation / scale, rot_to_r6d(pose.rotation)])


def decode_action(vec: np.ndarray, scale=1.0, frame=("t", "s")) -> Pose:
    vec = np.asarray(vec, dtype=float)
    return Pose(r6d_to_rot(vec[3:9]), vec[:3] * scale, frame)


def encode_matrices(T: np.ndarray) -> np.ndarray:
    """Batched ``(..., 4, 4)`` homogeneous matrices -> ``(..., 9)`` (translation in mm)."""
    return np.concatenate([T[..., :3, 3], T[..., :3, 0], T[..., :3, 1]], axis=-1)


def decode_matrices(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    T = np.zeros(vec.shape[:-1] + (4, 4))
    T[..., :3, :3] = r6d_to_rot(vec[..., 3:9])
    T[..., :3, 3] = vec[..., :3]
    T[..., 3, 3] = 1.0
    return T


# ---------------------------------------------------------------------------
# Small constructors used across the package
# ---------------------------------------------------------------------------


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = np.array(
        [[0.0, -omega[2], omega[1]], [omega[2], 0.0, -omega[0]], [-omega[1], omega[0], 0.0]]
    )
    if theta < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * (K @ K)


def yaw_of(R: np.ndarray) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, frame=("c", "s"), scale=100.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3), frame)


# ---------------------------------------------------------------------------
# Closed-loop transform chain
# ---------------------------------------------------------------------------


def end_effector_trajectory(
    t_b_e: Pose,
    t_b_c: Pose,
    t_c_s: Pose,
    t_c_t: Pose,
    pred: Sequence[Pose],
    h: int | None = None,
) -> list[Pose]:
    """Map predicted ``T_t^s`` poses to end-effector targets ``T_b^e``.

    The grasp transform ``T_s^e`` is recomputed from the current observation on
    every call, so the chain is evaluated fresh at each inference.
    """
    if h is not None and len(pred) != h:
        raise ValueError(f"expected {h} predicted poses, got {len(pred)}")
    t_b_s = compose(t_b_c, t_c_s)
    t_s_e = compose(inverse(t_b_s), t_b_e)
    out = []
    for p in pred:
        if p.frame != ("t", "s"):
            raise FrameMismatchError(f"predicted poses must be t->s, got {p.frame}")
        t_c_s_pred = compose(t_c_t, p)
        t_b_s_pred = compose(t_b_c, t_c_s_pred)
        out.append(compose(t_b_s_pred, t_s_e))
    return out
