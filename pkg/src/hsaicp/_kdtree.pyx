# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled query kernel for :class:`hsaicp.nnsearch.KDTree`.

The tree layout is built in Python (see ``nnsearch._build``); this module only
walks it. Squared distances are accumulated as ``dx*dx + dy*dy + dz*dz`` in that
order so results are bit-identical to the pure-Python fallback and to a numpy
linear scan.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef struct Tree:
    const double* pts
    const idx_t* perm
    const idx_t* lo
    const idx_t* hi
    const idx_t* dim
    const double* split
    const idx_t* left
    const idx_t* right


cdef void _search(const Tree* t, idx_t node, const double* q, idx_t skip,
                  double* best_d2, idx_t* best_i) noexcept nogil:
    cdef idx_t j, k, d, near, far
    cdef double dx, dy, dz, d2, diff
    d = t.dim[node]
    if d < 0:
        for j in range(t.lo[node], t.hi[node]):
            k = t.perm[j]
            if k == skip:
                continue
            dx = t.pts[3 * j] - q[0]
            dy = t.pts[3 * j + 1] - q[1]
            dz = t.pts[3 * j + 2] - q[2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best_d2[0] or (d2 == best_d2[0] and k < best_i[0]):
                best_d2[0] = d2
                best_i[0] = k
        return
    diff = q[d] - t.split[node]
    if diff < 0:
        near = t.left[node]
        far = t.right[node]
    else:
        near = t.right[node]
        far = t.left[node]
    _search(t, near, q, skip, best_d2, best_i)
    # '<=' keeps equal-distance candidates reachable for the lowest-index tie-break
    if diff * diff <= best_d2[0]:
        _search(t, far, q, skip, best_d2, best_i)


def query(const double[:, ::1] pts, const idx_t[::1] perm,
          const idx_t[::1] lo, const idx_t[::1] hi, const idx_t[::1] dim,
          const double[::1] split, const idx_t[::1] left, const idx_t[::1] right,
          const double[:, ::1] queries, bint exclude_self=False):
    """Nearest neighbour of every row of ``queries``.

    Returns ``(indices, squared_distances)``. With ``exclude_self`` query ``i``
    ignores point ``i`` of the indexed cloud.
    """
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t i
    cdef Tree t
    cdef double best_d2
    cdef idx_t best_i, skip
    out_idx = np.empty(n, dtype=np.int64)
    out_d2 = np.empty(n, dtype=np.float64)
    cdef idx_t[::1] oi = out_idx
    cdef double[::1] od = out_d2
    if n == 0:
        return out_idx, out_d2
    t.pts = &pts[0, 0]
    t.perm = &perm[0]
    t.lo = &lo[0]
    t.hi = &hi[0]
    t.dim = &dim[0]
    t.split = &split[0]
    t.left = &left[0]
    t.right = &right[0]
    with nogil:
        for i in range(n):
            best_d2 = INFINITY
            best_i = perm.shape[0]
            skip = i if exclude_self else -1
            _search(&t, 0, &queries[i, 0], skip, &best_d2, &best_i)
            oi[i] = best_i
            od[i] = best_d2
    return out_idx, out_d2
