"""Geometry primitives: point clouds, rigid transforms, point resolution.

A point cloud is an ``(N, 3)`` float64 array; row order is significant and is
preserved by every operation in the package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def as_cloud(points, name="cloud", min_points=1) -> np.ndarray:
    """Validate and return ``points`` as a C-contiguous ``(N, 3)`` float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < min_points:
        raise ValueError(f"{name} needs at least {min_points} point(s), got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rotation plus translation, acting as ``p -> R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise ValueError("transform contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        """Build from a homogeneous 4x4 matrix whose last row is ``0 0 0 1``."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("last row of a rigid 4x4 matrix must be 0 0 0 1")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "RigidTransform", atol=1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def apply_transform(cloud, T: RigidTransform) -> np.ndarray:
    pts = as_cloud(cloud)
    return pts @ T.rotation.T + T.translation


def invert_transform(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``B`` first, then ``A``."""
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def rotation_about_axis(axis, angle) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def mean_resolution(cloud) -> float:
    """Mean distance from each point to its nearest *other* point.

    Duplicated points contribute zero.
    """
    from .nnsearch import KDTree

    pts = as_cloud(cloud, min_points=2)
    _, dist = KDTree(pts).query(pts, exclude_self=True)
    return float(dist.mean())
