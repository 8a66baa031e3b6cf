import numpy as np
import pytest

from hsaicp.core import RigidTransform
from hsaicp.solver import DegenerateGeometryError, NoInliersError, weighted_rigid_solve, weighted_sse
from conftest import random_rotation, rot_z


def small_rotation(rng, scale):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    a = rng.normal() * scale
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K


def test_identity_fixed_point(rng):
    pts = rng.normal(size=(30, 3))
    T = weighted_rigid_solve(pts, pts, rng.uniform(0.1, 2, 30))
    assert T.allclose(RigidTransform.identity(), atol=1e-12)


def test_recovers_known_transform(rng):
    src = rng.normal(size=(50, 3))
    R0, t0 = rot_z(30), np.array([1.0, 2.0, 3.0])
    T = weighted_rigid_solve(src, src @ R0.T + t0)
    np.testing.assert_allclose(T.rotation, R0, atol=1e-9)
    np.testing.assert_allclose(T.translation, t0, atol=1e-9)


def test_zero_weight_outlier_ignored(rng):
    src = rng.normal(size=(40, 3))
    tgt = src @ rot_z(10).T + 0.5 + rng.normal(scale=0.01, size=(40, 3))
    w = rng.uniform(0.5, 1.0, 40)
    base = weighted_rigid_solve(src, tgt, w)
    src2 = np.vstack([src, [[100.0, -50.0, 3.0]]])
    tgt2 = np.vstack([tgt, [[-80.0, 9.0, 1e3]]])
    with_outlier = weighted_rigid_solve(src2, tgt2, np.append(w, 0.0))
    assert with_outlier.allclose(base, atol=1e-12)


def test_weighted_sse_examples(rng):
    src = rng.normal(size=(10, 3))
    assert weighted_sse(src, src, np.ones(10), RigidTransform.identity()) == 0.0
    assert weighted_sse([[0.0, 0, 0]], [[3.0, 4.0, 0.0]], [2.0], RigidTransform.identity()) == 50.0
    assert weighted_sse(src, src + 5, np.zeros(10), RigidTransform.identity()) == 0.0


def test_optimality_against_random_perturbations(rng):
    for _ in range(50):
        n = rng.integers(3, 40)
        src = rng.normal(size=(n, 3))
        tgt = rng.normal(size=(n, 3))
        w = rng.uniform(0, 1, n)
        T = weighted_rigid_solve(src, tgt, w)
        best = weighted_sse(src, tgt, w, T)
        assert best <= weighted_sse(src, tgt, w, RigidTransform.identity()) * (1 + 1e-12)
        for _ in range(100):
            P = RigidTransform(small_rotation(rng, 0.05) @ T.rotation, T.translation + rng.normal(scale=0.05, size=3))
            assert best <= weighted_sse(src, tgt, w, P) * (1 + 1e-12)


def test_weight_scale_invariance(rng):
    src = rng.normal(size=(25, 3))
    tgt = rng.normal(size=(25, 3))
    w = rng.uniform(0.1, 1, 25)
    T = weighted_rigid_solve(src, tgt, w)
    for c in (1e-6, 0.3, 7.0, 1e6):
        assert weighted_rigid_solve(src, tgt, c * w).allclose(T, atol=1e-10)


def test_reflection_guard_on_mirrored_data(rng):
    src = rng.normal(size=(30, 3))
    mirrored = src * [1.0, 1.0, -1.0]
    T = weighted_rigid_solve(src, mirrored)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0, abs=1e-12)


def test_translation_gradient_vanishes(rng):
    src = rng.normal(size=(40, 3))
    tgt = src @ random_rotation(rng).T + rng.normal(scale=0.3, size=(40, 3))
    w = rng.uniform(0.2, 1, 40)
    T = weighted_rigid_solve(src, tgt, w)
    h = 1e-6
    grad = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        plus = weighted_sse(src, tgt, w, RigidTransform(T.rotation, T.translation + e))
        minus = weighted_sse(src, tgt, w, RigidTransform(T.rotation, T.translation - e))
        grad.append((plus - minus) / (2 * h))
    np.testing.assert_allclose(grad, 0.0, atol=1e-8)


def test_translation_is_weighted_residual_mean(rng):
    src = rng.normal(size=(20, 3))
    tgt = rng.normal(size=(20, 3))
    w = rng.uniform(0, 1, 20)
    T = weighted_rigid_solve(src, tgt, w)
    expected = (w[:, None] * (tgt - src @ T.rotation.T)).sum(0) / w.sum()
    np.testing.assert_allclose(T.translation, expected, atol=1e-12)


def test_no_weight_raises(rng):
    src = rng.normal(size=(5, 3))
    with pytest.raises(NoInliersError):
        weighted_rigid_solve(src, src, np.zeros(5))


@pytest.mark.parametrize(
    "points",
    [
        np.outer(np.arange(6.0), [1.0, 2.0, -1.0]),  # collinear
        np.ones((5, 3)),  # coincident
        np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]]),  # only 4 points but fine geometry
    ],
    ids=["collinear", "coincident", "control"],
)
def test_degenerate_geometry(points):
    tgt = points + 1.0
    if len(points) == 4:
        weighted_rigid_solve(points, tgt)
        return
    with pytest.raises(DegenerateGeometryError):
        weighted_rigid_solve(points, tgt)


def test_too_few_weighted_pairs(rng):
    src = rng.normal(size=(10, 3))
    w = np.zeros(10)
    w[:2] = 1
    with pytest.raises(DegenerateGeometryError):
        weighted_rigid_solve(src, src, w)


def test_planar_support_is_fine(rng):
    src = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    R0 = random_rotation(rng)
    T = weighted_rigid_solve(src, src @ R0.T)
    np.testing.assert_allclose(T.rotation, R0, atol=1e-9)
