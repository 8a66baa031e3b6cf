"""Closed-form weighted rigid alignment (weighted centroids + SVD)."""
from __future__ import annotations

import numpy as np

from .core import RigidTransform

RANK_TOL = 1e-12


class RegistrationError(ValueError):
    pass


class NoInliersError(RegistrationError):
    """The weights sum to zero, so there is nothing to align."""


class DegenerateGeometryError(RegistrationError):
    """Support is collinear or coincident; the rotation is not determined.

    ``transform`` holds the (reflection-guarded) estimate anyway, when one
    could be formed.
    """

    def __init__(self, message, transform=None):
        super().__init__(message)
        self.transform = transform


def _check_pairs(source, target, weights):
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"source/target shapes differ or are not (N, 3): {src.shape}, {tgt.shape}")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != (len(src),):
            raise ValueError("one weight per pair is required")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and non-negative")
    return src, tgt, w


def weighted_rigid_solve(source, target, weights=None) -> RigidTransform:
    """Minimise ``sum_i w_i |R s_i + t - m_i|^2`` over proper rotations ``R`` and ``t``.

    With centred coordinates ``x_i = s_i - s̄`` and ``y_i = m_i - m̄`` (weighted
    means), ``H = sum_i w_i y_i x_iᵀ = U Λ Vᵀ`` and
    ``R = U diag(1, 1, det(U Vᵀ)) Vᵀ``, ``t = m̄ - R s̄``.

    Raises
    ------
    NoInliersError
        If the weights sum to zero.
    DegenerateGeometryError
        If fewer than 3 pairs carry weight or ``H`` has rank < 2.
    """
    src, tgt, w = _check_pairs(source, target, weights)
    total = w.sum()
    if not total > 0:
        raise NoInliersError("weights sum to zero")
    if np.count_nonzero(w) < 3:
        raise DegenerateGeometryError("fewer than 3 weighted pairs")

    mu_s = (w @ src) / total
    mu_t = (w @ tgt) / total
    x = src - mu_s
    y = tgt - mu_t
    H = (y * w[:, None]).T @ x
    U, S, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    t = mu_t - R @ mu_s
    if not S[0] > 0 or S[1] <= RANK_TOL * S[0]:
        raise DegenerateGeometryError("weighted support is collinear or coincident", RigidTransform(R, t))
    return RigidTransform(R, t)


def weighted_sse(source, target, weights, T: RigidTransform) -> float:
    """``sum_i w_i |R s_i + t - m_i|^2``."""
    src, tgt, w = _check_pairs(source, target, weights)
    r = src @ T.rotation.T + T.translation - tgt
    return float(w @ np.einsum("ij,ij->i", r, r))
