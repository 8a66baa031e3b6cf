"""Rigid point-cloud registration with hard (overlap) and soft (reliability)
correspondence assignment, plus ICP-family baselines and a synthetic
partial-overlap benchmark."""
from .core import RigidTransform, apply_transform, compose, invert_transform, mean_resolution
from .nnsearch import DEFAULT_BACKEND as KDTREE_BACKEND
from .nnsearch import KDTree, build_index, nearest
from .pipeline import (
    ALGORITHMS,
    RegistrationParams,
    RegistrationResult,
    cticp,
    ftricp,
    hsa_icp,
    icp,
    register,
    wicp,
)
from .solver import DegenerateGeometryError, NoInliersError, weighted_rigid_solve, weighted_sse

__all__ = [
    "ALGORITHMS",
    "KDTREE_BACKEND",
    "KDTree",
    "DegenerateGeometryError",
    "NoInliersError",
    "RegistrationParams",
    "RegistrationResult",
    "RigidTransform",
    "apply_transform",
    "build_index",
    "compose",
    "cticp",
    "ftricp",
    "hsa_icp",
    "icp",
    "invert_transform",
    "mean_resolution",
    "nearest",
    "register",
    "weighted_rigid_solve",
    "weighted_sse",
    "wicp",
]
