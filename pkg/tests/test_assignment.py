import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsaicp.assignment import (
    backward_correspondences,
    bilateral_assignment,
    distance_ratio,
    forward_correspondences,
    hard_assignment,
    soft_assignment,
)
from hsaicp.core import RigidTransform, apply_transform
from hsaicp.nnsearch import KDTree
from conftest import random_rotation


def exhaustive_prefix(dists, lam, xi_min):
    """Evaluate the trimmed statistic on every allowed prefix independently."""
    sq = np.sort(np.asarray(dists) ** 2)
    n = len(sq)
    best = None
    for h in range(max(1, math.ceil(xi_min * n - 1e-9)), n + 1):
        xi = h / n
        psi = np.sum(sq[:h]) / (h * xi ** (1 + lam))
        if best is None or psi < best[1]:
            best = (h, psi)
    return best


def exhaustive_subsets(dists, lam, xi_min):
    """Minimum over *all* subsets (not just prefixes) for tiny inputs."""
    sq = np.asarray(dists) ** 2
    n = len(sq)
    best = np.inf
    for h in range(max(1, math.ceil(xi_min * n - 1e-9)), n + 1):
        for sub in itertools.combinations(range(n), h):
            best = min(best, sum(sq[list(sub)]) / (h * (h / n) ** (1 + lam)))
    return best


def test_forward_exact_overlap(rng):
    pts = rng.normal(size=(60, 3))
    c, d = forward_correspondences(KDTree(pts), pts)
    assert np.array_equal(c, np.arange(60)) and np.all(d == 0)


def test_forward_shifted_lattice():
    spacing = 0.7
    g = np.arange(5) * spacing
    model = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    data = model + [0.4 * spacing, 0.0, 0.0]
    c, d = forward_correspondences(KDTree(model), data)
    np.testing.assert_allclose(d, 0.4 * spacing, rtol=1e-12)
    assert np.array_equal(c, np.arange(len(model)))


def test_forward_matches_double_loop(rng):
    model = rng.normal(size=(300, 3))
    data = rng.normal(size=(200, 3))
    c, d = forward_correspondences(KDTree(model), data)
    full = np.linalg.norm(data[:, None] - model[None], axis=-1)
    assert np.array_equal(c, full.argmin(axis=1))
    np.testing.assert_allclose(d, full.min(axis=1), rtol=1e-12)


def test_hard_assignment_worked_example():
    # squared distances [1, 1, 1, 100]; psi over prefixes: 64, 8, 2.370..., 25.75
    ha = hard_assignment(np.sqrt([1.0, 1.0, 1.0, 100.0]), lam=2, xi_min=0.25)
    assert ha.xi == 0.75 and ha.inlier_count == 3
    assert ha.psi == pytest.approx(1 / 0.75**3, abs=1e-9)
    assert ha.psi == pytest.approx(2.370370370, abs=1e-9)
    assert ha.mask.tolist() == [True, True, True, False]


def test_hard_assignment_worked_example_prefix_values():
    sq = np.array([1.0, 1.0, 1.0, 100.0])
    psi = [sq[:h].sum() / (h * (h / 4) ** 3) for h in range(1, 5)]
    np.testing.assert_allclose(psi, [64, 8, 2.370370370370, 25.75], atol=1e-9)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 5.0])
def test_equal_residuals_force_full_overlap(lam):
    ha = hard_assignment(np.full(37, 0.3), lam=lam, xi_min=0.25)
    assert ha.xi == 1.0 and ha.mask.all()


def test_all_zero_distances_full_overlap():
    ha = hard_assignment(np.zeros(10), xi_min=0.3)
    assert ha.xi == 1.0 and ha.psi == 0.0 and ha.mask.all()


def test_min_prefix_respects_xi_min():
    # a few tiny distances would win with a free choice; xi_min forbids prefixes below 3
    ha = hard_assignment([0.0, 1e-9, 5, 5, 5, 5, 5, 5, 5, 5], lam=2, xi_min=0.3)
    assert ha.inlier_count >= 3


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 9), seed=st.integers(0, 2**32 - 1), lam=st.sampled_from([1.0, 2.0, 3.0]))
def test_prefix_is_globally_optimal_subset(n, seed, lam):
    d = np.random.default_rng(seed).exponential(size=n)
    ha = hard_assignment(d, lam=lam, xi_min=0.25)
    assert ha.psi == pytest.approx(exhaustive_subsets(d, lam, 0.25), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 400), seed=st.integers(0, 2**32 - 1), xi_min=st.floats(0.05, 1.0))
def test_matches_exhaustive_prefix_search(n, seed, xi_min):
    rng = np.random.default_rng(seed)
    d = np.concatenate([rng.uniform(0, 1, n), rng.uniform(2, 20, rng.integers(0, n + 1))])
    ha = hard_assignment(d, lam=2, xi_min=xi_min)
    h, psi = exhaustive_prefix(d, 2, xi_min)
    assert ha.inlier_count == h
    assert ha.psi == pytest.approx(psi, rel=1e-10)
    # prefix property: every inlier distance <= every outlier distance
    if not ha.mask.all():
        assert d[ha.mask].max() <= d[~ha.mask].min()


def test_hard_assignment_rejects_bad_arguments():
    with pytest.raises(ValueError):
        hard_assignment([1.0], lam=0)
    with pytest.raises(ValueError):
        hard_assignment([1.0], xi_min=0)
    with pytest.raises(ValueError):
        hard_assignment([-1.0])
    with pytest.raises(ValueError):
        hard_assignment([])


def brute_backward_transformed(data, model_pts, T):
    """Backward match measured against the *transformed* data cloud."""
    X = apply_transform(data, T)
    full = np.linalg.norm(model_pts[:, None] - X[None], axis=-1)
    return full.argmin(axis=1), full.min(axis=1)


def test_backward_identity_self_match(rng):
    pts = rng.normal(size=(50, 3))
    l, d = backward_correspondences(KDTree(pts), pts[[4, 9, 20]], RigidTransform.identity())
    assert l.tolist() == [4, 9, 20] and np.all(d == 0)


def test_backward_singleton_data():
    l, d = backward_correspondences(KDTree([[1.0, 1.0, 1.0]]), np.eye(3), RigidTransform.identity())
    assert l.tolist() == [0, 0, 0]


@pytest.mark.parametrize("seed", range(10))
def test_pullback_equals_transformed_space_search(seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(400, 3))
    model = rng.normal(size=(300, 3)) * 1.2
    T = RigidTransform(random_rotation(rng), rng.uniform(-3, 3, 3))
    l, d = backward_correspondences(KDTree(data), model, T)
    ref_l, ref_d = brute_backward_transformed(data, model, T)
    assert np.array_equal(l, ref_l)
    np.testing.assert_allclose(d, ref_d, rtol=1e-9)


def test_distance_ratio_examples():
    assert distance_ratio(0.5, 0.5, 1e-6) == 1.0
    assert distance_ratio(0.0, 0.0, 1e-6) == 1.0
    # (2e-3 + 1e-9) / (1e-3 + 1e-9) = 2.000001 / 1.000001
    assert distance_ratio(2e-3, 1e-3, 1e-9) == pytest.approx(1.999999000001, rel=1e-12)
    with pytest.raises(ValueError):
        distance_ratio(-1.0, 0.0, 1e-6)
    with pytest.raises(ValueError):
        distance_ratio(1.0, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(b=st.floats(0, 10), extra=st.floats(0, 10), delta=st.floats(1e-9, 1e-3))
def test_distance_ratio_bounds(b, extra, delta):
    f = b + extra
    rho = distance_ratio(f, b, delta)
    assert rho >= 1.0
    if b > 0:
        assert rho <= f / b * (1 + 1e-12)


def test_soft_assignment_examples():
    assert soft_assignment(1.0, 7.0) == 1.0
    assert soft_assignment(1.5, 2.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert soft_assignment(1.5, 2.0) == pytest.approx(0.367879, abs=1e-6)
    assert soft_assignment(123.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        soft_assignment(0.99, 1.0)
    with pytest.raises(ValueError):
        soft_assignment(1.0, -1.0)


def test_soft_assignment_monotone():
    rho = np.linspace(1, 10, 200)
    p = soft_assignment(rho, 2.0)
    assert np.all(np.diff(p) <= 0) and np.all(p > 0) and np.all(p <= 1)
    assert np.all(p[1:] < 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_bilateral_assignment_invariants(seed):
    rng = np.random.default_rng(seed)
    model = rng.normal(size=(500, 3))
    data = model[:400] + rng.normal(scale=0.05, size=(400, 3))
    data[300:] += 4.0  # non-overlapping tail
    T = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
    cs = bilateral_assignment(KDTree(model), KDTree(data), data, model, T, delta=1e-6)
    assert np.all(cs.rho >= 1.0)
    assert np.all((cs.p > 0) & (cs.p <= 1))
    assert np.all(cs.q[cs.omega == 0] == 0.0)
    assert np.array_equal(cs.q[cs.inliers], cs.p)
    assert np.all(cs.backward_dist <= cs.forward_dist[cs.inliers])
    assert len(cs.backward_source) == len(cs.inliers) == cs.hard.inlier_count


def test_rounding_level_distances_count_as_exact_fit():
    d = np.array([3e-17, 0.0, 1e-16, 2e-17, 5e-17])
    assert hard_assignment(d, xi_min=0.25).xi < 1.0
    assert hard_assignment(d, xi_min=0.25, zero_tol=1e-9).xi == 1.0
    # one real residual above the floor restores normal trimming
    d[0] = 1.0
    assert hard_assignment(d, xi_min=0.25, zero_tol=1e-9).xi < 1.0
