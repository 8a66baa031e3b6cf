"""Pure-Python query kernel, used when the compiled extension is unavailable.

Mirrors ``_kdtree.pyx`` operation for operation (including the order of the
squared-distance accumulation), so both backends return identical results.
"""
import numpy as np


def query(pts, perm, lo, hi, dim, split, left, right, queries, exclude_self=False):
    pts_l = np.asarray(pts).tolist()
    perm_l = np.asarray(perm).tolist()
    lo_l = np.asarray(lo).tolist()
    hi_l = np.asarray(hi).tolist()
    dim_l = np.asarray(dim).tolist()
    split_l = np.asarray(split).tolist()
    left_l = np.asarray(left).tolist()
    right_l = np.asarray(right).tolist()
    n_points = len(perm_l)

    out_idx = np.empty(len(queries), dtype=np.int64)
    out_d2 = np.empty(len(queries), dtype=np.float64)

    for i, q in enumerate(np.asarray(queries).tolist()):
        skip = i if exclude_self else -1
        best_d2 = float("inf")
        best_i = n_points
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > best_d2:
                continue
            d = dim_l[node]
            if d < 0:
                for j in range(lo_l[node], hi_l[node]):
                    k = perm_l[j]
                    if k == skip:
                        continue
                    p = pts_l[j]
                    dx = p[0] - q[0]
                    dy = p[1] - q[1]
                    dz = p[2] - q[2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d2 or (d2 == best_d2 and k < best_i):
                        best_d2 = d2
                        best_i = k
                continue
            diff = q[d] - split_l[node]
            if diff < 0:
                near, far = left_l[node], right_l[node]
            else:
                near, far = right_l[node], left_l[node]
            # far pushed first so near is explored first; its bound is re-checked on pop
            stack.append((far, diff * diff))
            stack.append((near, 0.0))
        out_idx[i] = best_i
        out_d2[i] = best_d2
    return out_idx, out_d2
