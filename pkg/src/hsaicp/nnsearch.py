"""Exact nearest-neighbour search over a fixed cloud with a k-d tree.

Queries use the compiled kernel from ``_kdtree`` when it has been built, and
fall back to the pure-Python kernel otherwise. Set ``HSA_ICP_PURE_PYTHON=1``
to force the fallback.

Ties are broken by the lowest point index, so results are deterministic and
directly comparable with a linear scan.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kdtree_py
from .core import as_cloud

try:
    if os.environ.get("HSA_ICP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _kdtree as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kdtree_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"

LEAF_SIZE = 8


def _build(points, leaf_size):
    n = len(points)
    perm = np.arange(n, dtype=np.int64)
    lo, hi, dim, split, left, right = [], [], [], [], [], []

    def new_node(a, b):
        lo.append(a)
        hi.append(b)
        dim.append(-1)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        return len(lo) - 1

    stack = [new_node(0, n)]
    while stack:
        node = stack.pop()
        a, b = lo[node], hi[node]
        if b - a <= leaf_size:
            continue
        sub = perm[a:b]
        coords = points[sub]
        spread = coords.max(axis=0) - coords.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            # all points coincide; keep as an oversized leaf
            continue
        k = (b - a) // 2
        order = np.argpartition(coords[:, axis], k, kind="introselect")
        perm[a:b] = sub[order]
        dim[node] = axis
        split[node] = float(points[perm[a + k], axis])
        left[node] = new_node(a, a + k)
        right[node] = new_node(a + k, b)
        stack.append(right[node])
        stack.append(left[node])

    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return (
        perm,
        as_i(lo),
        as_i(hi),
        as_i(dim),
        np.asarray(split, dtype=np.float64),
        as_i(left),
        as_i(right),
    )


class KDTree:
    """Median-split k-d tree over a 3-D point cloud (widest-spread axis).

    The indexed points are copied; the caller's array is never touched.
    """

    def __init__(self, points, leaf_size=LEAF_SIZE, backend=None):
        self.points = as_cloud(points).copy()
        self.points.flags.writeable = False
        self.backend = backend or DEFAULT_BACKEND
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown or unavailable backend {self.backend!r}")
        self._kernel = BACKENDS[self.backend]
        perm, lo, hi, dim, split, left, right = _build(self.points, leaf_size)
        self._arrays = (
            np.ascontiguousarray(self.points[perm]),
            perm,
            lo,
            hi,
            dim,
            split,
            left,
            right,
        )

    def __len__(self):
        return len(self.points)

    def query(self, queries, exclude_self=False):
        """Nearest indexed point for each query row.

        Returns ``(indices, distances)``. With ``exclude_self`` (queries must then
        be the indexed cloud itself, row for row) point ``i`` is skipped for
        query ``i``.
        """
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q.reshape(1, 3)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError(f"queries must have shape (K, 3), got {q.shape}")
        if not np.isfinite(q).all():
            raise ValueError("queries contain non-finite coordinates")
        if exclude_self and (len(q) != len(self.points) or len(q) < 2):
            raise ValueError("exclude_self needs the indexed cloud (>= 2 points) as queries")
        idx, d2 = self._kernel.query(*self._arrays, q, exclude_self)
        return idx, np.sqrt(d2)

    def nearest(self, point):
        idx, dist = self.query(np.asarray(point, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])


def build_index(cloud, backend=None) -> KDTree:
    return KDTree(cloud, backend=backend)


def nearest(index: KDTree, query):
    """``(point_index, distance)`` of the nearest indexed point to ``query``."""
    return index.nearest(query)
