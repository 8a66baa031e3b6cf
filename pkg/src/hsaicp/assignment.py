"""Per-iteration correspondence machinery.

Forward matches (data -> model), overlap selection by trimmed sequence
processing (hard assignment), backward matches for the selected inliers, and
the reliability weight derived from the ratio of the two distances (soft
assignment).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RigidTransform, apply_transform, invert_transform
from .nnsearch import KDTree


@dataclass(frozen=True, eq=False)
class HardAssignment:
    xi: float
    inlier_count: int
    psi: float
    mask: np.ndarray  # bool, original data indexing


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Bilateral correspondences of one iteration.

    ``forward_target``/``forward_dist``/``omega`` cover every data point;
    ``inliers`` lists the data indices with ``omega == 1`` and the backward
    fields, ``rho`` and ``p`` are aligned with it. ``q`` covers every data point
    and is zero for outliers.
    """

    forward_target: np.ndarray
    forward_dist: np.ndarray
    omega: np.ndarray
    inliers: np.ndarray
    backward_source: np.ndarray
    backward_dist: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    q: np.ndarray
    hard: HardAssignment


def forward_correspondences(model_index: KDTree, transformed_data):
    """Nearest model point ``c(i)`` and its distance for every data point."""
    return model_index.query(transformed_data)


def min_prefix(n, xi_min):
    # guard against 0.3 * 10 == 3.0000000000000004 rounding up to 4
    return max(1, math.ceil(xi_min * n - 1e-9))


def hard_assignment(forward_dists, lam=2.0, xi_min=0.25, zero_tol=0.0) -> HardAssignment:
    """Select the overlap ratio minimising the trimmed statistic.

    For every prefix size ``h`` of the ascending squared distances (from
    ``ceil(xi_min * N)`` to ``N``) evaluates::

        psi(h) = sum(first h squared distances) / (h * (h / N) ** (1 + lam))

    and keeps the minimising prefix; ties go to the smaller prefix. If every
    distance is ``<= zero_tol`` (the fit is already exact up to rounding) the
    whole cloud is returned (``xi = 1``).
    """
    d = np.asarray(forward_dists, dtype=np.float64).ravel()
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not 0 < xi_min <= 1:
        raise ValueError("xi_min must lie in (0, 1]")
    n = d.size
    if n == 0:
        raise ValueError("no distances given")
    if (d < 0).any() or not np.isfinite(d).all():
        raise ValueError("distances must be finite and non-negative")

    sq = d * d
    order = np.argsort(sq, kind="stable")
    csum = np.cumsum(sq[order])
    h_min = min_prefix(n, xi_min)
    mask = np.zeros(n, dtype=bool)

    if d.max() <= zero_tol:
        mask[:] = True
        return HardAssignment(1.0, n, float(csum[-1]) / n, mask)

    h = np.arange(h_min, n + 1, dtype=np.float64)
    xi = h / n
    psi = csum[h_min - 1:] / (h * xi ** (1.0 + lam))
    best = int(np.argmin(psi))
    count = h_min + best
    mask[order[:count]] = True
    return HardAssignment(count / n, count, float(psi[best]), mask)


def backward_correspondences(data_index: KDTree, model_points, current_T: RigidTransform):
    """Nearest data point ``l`` for each matched model point.

    The model points are pulled back through the inverse of ``current_T`` and
    queried against the tree of the *untransformed* data, so that tree is built
    once per run. Distances are rigid-invariant, hence equal to those measured
    against the transformed data.
    """
    pulled = apply_transform(model_points, invert_transform(current_T))
    return data_index.query(pulled)


def distance_ratio(forward_dist, backward_dist, delta):
    """``(forward + delta) / (backward + delta)``; scalar or array."""
    f = np.asarray(forward_dist, dtype=np.float64)
    b = np.asarray(backward_dist, dtype=np.float64)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if (f < 0).any() or (b < 0).any():
        raise ValueError("distances must be non-negative")
    out = (f + delta) / (b + delta)
    return float(out) if out.ndim == 0 else out


def soft_assignment(rho, gamma):
    """Reliability weight ``exp(-gamma * (rho - 1))`` in (0, 1]."""
    r = np.asarray(rho, dtype=np.float64)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if (r < 1.0).any() or np.isnan(r).any():
        raise ValueError("rho must be >= 1")
    out = np.exp(-gamma * (r - 1.0))
    return float(out) if out.ndim == 0 else out


def bilateral_assignment(
    model_index: KDTree,
    data_index: KDTree,
    data,
    model,
    current_T: RigidTransform,
    gamma=2.0,
    lam=2.0,
    xi_min=0.25,
    delta=1e-6,
    transformed_data=None,
) -> CorrespondenceSet:
    """Run the full correspondence step for the current transform."""
    if transformed_data is None:
        transformed_data = apply_transform(data, current_T)
    c, fwd = forward_correspondences(model_index, transformed_data)
    hard = hard_assignment(fwd, lam, xi_min, zero_tol=delta)
    inliers = np.flatnonzero(hard.mask)
    l, bwd = backward_correspondences(data_index, model[c[inliers]], current_T)
    # d_i is itself a backward candidate, so bwd <= fwd holds up to rounding
    bwd = np.minimum(bwd, fwd[inliers])
    rho = distance_ratio(fwd[inliers], bwd, delta)
    p = soft_assignment(rho, gamma)
    q = np.zeros(len(fwd))
    q[inliers] = p
    return CorrespondenceSet(
        forward_target=c,
        forward_dist=fwd,
        omega=hard.mask.astype(np.int8),
        inliers=inliers,
        backward_source=l,
        backward_dist=bwd,
        rho=np.atleast_1d(rho),
        p=np.atleast_1d(p),
        q=q,
        hard=hard,
    )
