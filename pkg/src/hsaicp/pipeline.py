"""Iterative registration: the hard/soft-assignment ICP and its baselines.

All algorithms share one loop and differ only in how the per-iteration pair
weights are produced:

``hsa``     trimmed overlap (hard) x bidirectional reliability (soft)
``ftricp``  trimmed overlap only, unit weights on inliers
``icp``     every data point, unit weights
``wicp``    linear down-weighting ``max(0, 1 - dist / tau)``, ``tau = 3 * median``
``cticp``   Gaussian (correntropy) weights with fixed ``sigma = 2 * d``
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .assignment import bilateral_assignment, hard_assignment
from .core import RigidTransform, apply_transform, as_cloud, mean_resolution
from .nnsearch import KDTree
from .solver import RegistrationError, weighted_rigid_solve, weighted_sse

ALGORITHMS = ("hsa", "icp", "ftricp", "wicp", "cticp")

# slack when checking that a solver update did not raise the objective: relative,
# plus an absolute floor of (1e-12 x coordinate extent)^2 per unit weight
MONOTONE_RTOL = 1e-12


def objective_increased(sse_before, sse_after, total_weight, extent):
    slack = MONOTONE_RTOL * sse_before + total_weight * (MONOTONE_RTOL * extent) ** 2
    return sse_after > sse_before + slack


@dataclass(frozen=True)
class RegistrationParams:
    """Tunables for every algorithm.

    ``delta`` and ``trans_tol`` default to ``1e-6 * d`` with ``d`` the mean
    point resolution of the model cloud.
    """

    algorithm: str = "hsa"
    gamma: float = 2.0
    lam: float = 2.0
    xi_min: float = 0.25
    delta: Optional[float] = None
    max_iterations: int = 100
    rel_tol: float = 1e-8
    trans_tol: Optional[float] = None
    tau_factor: float = 3.0
    sigma_factor: float = 2.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0 < self.xi_min <= 1:
            raise ValueError("xi_min must lie in (0, 1]")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.rel_tol >= 0:
            raise ValueError("rel_tol must be >= 0")
        if self.trans_tol is not None and not self.trans_tol >= 0:
            raise ValueError("trans_tol must be >= 0")
        if not (self.tau_factor > 0 and self.sigma_factor > 0):
            raise ValueError("tau_factor and sigma_factor must be > 0")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class RegistrationResult:
    algorithm: str
    transform: RigidTransform
    iterations: int
    converged: bool
    xi_final: float
    resolution: float
    objective_trace: list = field(default_factory=list)
    inlier_count_trace: list = field(default_factory=list)
    xi_trace: list = field(default_factory=list)
    sse_trace: list = field(default_factory=list)
    assignment_violations: int = 0
    monotonicity_violations: int = 0
    reason: Optional[str] = None
    runtime: float = 0.0


@dataclass(frozen=True, eq=False)
class IterationInfo:
    """Snapshot handed to the optional per-iteration callback."""

    iteration: int
    transform_before: RigidTransform
    transform_after: RigidTransform
    source_indices: np.ndarray
    target_indices: np.ndarray
    weights: np.ndarray
    xi: float
    sse_before: float
    sse_after: float
    rho: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None


class _Context:
    def __init__(self, data, model, params):
        self.data = data
        self.model = model
        self.params = params
        self.model_index = KDTree(model)
        self.resolution = mean_resolution(model)
        self.delta = params.delta if params.delta is not None else 1e-6 * self.resolution
        self.trans_tol = params.trans_tol if params.trans_tol is not None else 1e-6 * self.resolution
        self.data_index = KDTree(data) if params.algorithm == "hsa" else None


# Each weighting step returns (data indices, their model targets, weights, xi, rho, p).

def _weights_hsa(ctx, T, X):
    p = ctx.params
    cs = bilateral_assignment(
        ctx.model_index, ctx.data_index, ctx.data, ctx.model, T,
        gamma=p.gamma, lam=p.lam, xi_min=p.xi_min, delta=ctx.delta, transformed_data=X,
    )
    idx = cs.inliers
    return idx, cs.forward_target[idx], cs.p, cs.hard.xi, cs.rho, cs.p


def _weights_ftricp(ctx, T, X):
    c, fwd = ctx.model_index.query(X)
    hard = hard_assignment(fwd, ctx.params.lam, ctx.params.xi_min, zero_tol=ctx.delta)
    idx = np.flatnonzero(hard.mask)
    return idx, c[idx], np.ones(len(idx)), hard.xi, None, None


def _weights_icp(ctx, T, X):
    c, _ = ctx.model_index.query(X)
    return np.arange(len(X)), c, np.ones(len(X)), 1.0, None, None


def _weights_wicp(ctx, T, X):
    c, fwd = ctx.model_index.query(X)
    w = wicp_weights(fwd, ctx.params.tau_factor)
    idx = np.flatnonzero(w > 0)
    return idx, c[idx], w[idx], 1.0, None, None


def _weights_cticp(ctx, T, X):
    c, fwd = ctx.model_index.query(X)
    w = correntropy_weights(fwd, ctx.params.sigma_factor * ctx.resolution)
    idx = np.flatnonzero(w > 0)
    return idx, c[idx], w[idx], 1.0, None, None


_WEIGHTING = {
    "hsa": _weights_hsa,
    "ftricp": _weights_ftricp,
    "icp": _weights_icp,
    "wicp": _weights_wicp,
    "cticp": _weights_cticp,
}


def wicp_weights(dists, tau_factor=3.0):
    """Linear down-weighting with hard rejection beyond ``tau_factor * median``."""
    d = np.asarray(dists, dtype=np.float64)
    tau = tau_factor * float(np.median(d))
    if tau == 0.0:
        return np.ones_like(d)
    return np.maximum(0.0, 1.0 - d / tau)


def correntropy_weights(dists, sigma):
    d = np.asarray(dists, dtype=np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def _mse_settled(new, old, rel_tol, trans_tol):
    # changes below trans_tol**2 are rounding noise of an (almost) exact fit
    change = abs(new - old)
    return change < rel_tol * old or change < trans_tol * trans_tol


def register(data, model, init: Optional[RigidTransform] = None, params: Optional[RegistrationParams] = None,
             callback: Optional[Callable[[IterationInfo], None]] = None) -> RegistrationResult:
    """Align ``data`` onto ``model``; the algorithm is ``params.algorithm``.

    Stops after ``max_iterations`` or once the relative change of the weighted
    inlier MSE drops below ``rel_tol`` *and* the translation step is below
    ``trans_tol`` (an MSE change below ``trans_tol ** 2`` also counts as
    settled). If the solver hits degenerate geometry or no pair carries
    weight, the last valid transform is returned with ``converged=False``.
    """
    start = time.perf_counter()
    params = params or RegistrationParams()
    D = as_cloud(data, "data", min_points=3)
    M = as_cloud(model, "model", min_points=3)
    T = init if init is not None else RigidTransform.identity()
    ctx = _Context(D, M, params)
    weigh = _WEIGHTING[params.algorithm]

    result = RegistrationResult(params.algorithm, T, 0, False, 1.0, ctx.resolution)
    prev_mse = None
    for k in range(1, params.max_iterations + 1):
        X = apply_transform(D, T)
        idx, targets, w, xi, rho, p = weigh(ctx, T, X)
        if rho is not None and ((rho < 1.0).any() or (p <= 0.0).any() or (p > 1.0).any()):
            result.assignment_violations += 1
        total = float(w.sum()) if len(w) else 0.0
        if total == 0.0:
            result.reason = "no pair carries weight"
            break
        src = D[idx]
        tgt = M[targets]
        try:
            T_new = weighted_rigid_solve(src, tgt, w)
        except RegistrationError as exc:
            result.reason = f"solver failed: {exc}"
            break
        sse_before = weighted_sse(src, tgt, w, T)
        sse_after = weighted_sse(src, tgt, w, T_new)
        if objective_increased(sse_before, sse_after, total, np.abs(tgt).max()):
            result.monotonicity_violations += 1
        mse = sse_after / total
        step = float(np.linalg.norm(T_new.translation - T.translation))

        result.iterations = k
        result.xi_final = xi
        result.objective_trace.append(mse)
        result.inlier_count_trace.append(len(idx))
        result.xi_trace.append(xi)
        result.sse_trace.append((sse_before, sse_after))
        if callback is not None:
            callback(IterationInfo(k, T, T_new, idx, targets, w, xi, sse_before, sse_after, rho, p))
        T = T_new
        result.transform = T

        if prev_mse is not None and _mse_settled(mse, prev_mse, params.rel_tol, ctx.trans_tol) and step < ctx.trans_tol:
            result.converged = True
            break
        prev_mse = mse

    result.runtime = time.perf_counter() - start
    return result


def _with_algorithm(name):
    def run(data, model, init=None, params=None, callback=None):
        params = replace(params, algorithm=name) if params is not None else RegistrationParams(algorithm=name)
        return register(data, model, init, params, callback)

    run.__name__ = f"{name}_icp" if name == "hsa" else name
    run.__doc__ = f"Run :func:`register` with ``algorithm={name!r}``."
    return run


hsa_icp = _with_algorithm("hsa")
icp = _with_algorithm("icp")
ftricp = _with_algorithm("ftricp")
wicp = _with_algorithm("wicp")
cticp = _with_algorithm("cticp")
