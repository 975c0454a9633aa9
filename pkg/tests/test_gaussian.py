"""
ガウスクラスタの数理のテスト
"""

import math

import numpy as np
import pytest

from logic.gaussian import (
    effective_covariance,
    incremental_update,
    log_volume,
    mahalanobis_sq,
    membership,
    merge_pair,
    overlap_ratio,
)
from models.data_models import DetMode, GaussianCluster, PrototypeSpec
from models.errors import DegenerateClusterError, MergeRefusedError, RejectedSampleError


def _absorb(points: np.ndarray, cluster_id: int = 0) -> GaussianCluster:
    c = GaussianCluster.born_at(cluster_id, points[0], tick=1)
    for tick, x in enumerate(points[1:], start=2):
        incremental_update(c, x, tick)
    return c


# =====================================================================
# 実効共分散
# =====================================================================


def test_birth_covariance_is_prototype(make_cluster):
    proto = PrototypeSpec(sigma2=[1.0, 1.0], n_r=4)
    sigma = effective_covariance(make_cluster(0, [3.0, -1.0]), proto)
    np.testing.assert_array_equal(sigma, np.diag([0.25, 0.25]))


def test_no_prior_equals_sample_covariance():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    proto = PrototypeSpec(sigma2=[1.0, 1.0], n_r=4)
    sigma = effective_covariance(_absorb(points), proto, prior_weight=0)
    np.testing.assert_allclose(sigma, np.cov(points.T), atol=1e-14)


def test_no_prior_single_sample_is_degenerate(make_cluster):
    proto = PrototypeSpec(sigma2=[1.0, 1.0], n_r=4)
    with pytest.raises(DegenerateClusterError):
        effective_covariance(make_cluster(0, [0.0, 0.0]), proto, prior_weight=0)


def test_duplicate_points_keep_prior(make_cluster):
    proto = PrototypeSpec(sigma2=[2.0, 2.0], n_r=2)
    c = _absorb(np.zeros((5, 2)))
    np.testing.assert_array_equal(c.scatter, np.zeros((2, 2)))
    np.testing.assert_allclose(effective_covariance(c, proto), np.eye(2) / 5)


def test_large_sample_converges_to_true_covariance(rng):
    true = np.array([[2.0, 0.5], [0.5, 1.0]])
    points = rng.multivariate_normal([1.0, -1.0], true, size=10_000)
    proto = PrototypeSpec(sigma2=[1.0, 1.0], n_r=4)
    sigma = effective_covariance(_absorb(points), proto)
    assert np.linalg.norm(sigma - true) / np.linalg.norm(true) <= 0.05


# =====================================================================
# マハラノビス距離と帰属度
# =====================================================================


def test_mahalanobis_examples(make_cluster):
    c = make_cluster(0, [0.0, 0.0])
    assert mahalanobis_sq(np.zeros(2), c, np.eye(2)) == 0.0
    assert mahalanobis_sq(np.array([3.0, 4.0]), c, np.eye(2)) == pytest.approx(25.0)
    assert mahalanobis_sq(np.array([2.0, 0.0]), c, np.diag([4.0, 1.0])) == pytest.approx(1.0)


def test_mahalanobis_is_affine_invariant(make_cluster, rng):
    sigma = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
    mu = rng.normal(size=3)
    x = rng.normal(size=3)
    A = np.array([[1.5, 0.2, 0.0], [0.1, 0.9, 0.3], [0.0, -0.4, 1.2]])
    b = np.array([5.0, -2.0, 0.5])

    before = mahalanobis_sq(x, make_cluster(0, mu), sigma)
    after = mahalanobis_sq(A @ x + b, make_cluster(0, A @ mu + b), A @ sigma @ A.T)
    assert after == pytest.approx(before, abs=1e-8)


def test_membership_range(make_cluster):
    c = make_cluster(0, [0.0, 0.0])
    assert membership(np.zeros(2), c, np.eye(2)) == 1.0
    assert membership(np.array([1.0, 1.0]), c, np.eye(2)) == pytest.approx(math.exp(-1))
    assert 0.0 < membership(np.array([30.0, 0.0]), c, np.eye(2)) < 1e-100


def test_non_positive_definite_raises(make_cluster):
    c = make_cluster(0, [0.0, 0.0])
    with pytest.raises(DegenerateClusterError):
        mahalanobis_sq(np.ones(2), c, np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_rejects_bad_samples(make_cluster):
    c = make_cluster(0, [0.0, 0.0])
    with pytest.raises(RejectedSampleError):
        mahalanobis_sq(np.array([np.nan, 0.0]), c, np.eye(2))
    with pytest.raises(RejectedSampleError):
        mahalanobis_sq(np.zeros(3), c, np.eye(2))


# =====================================================================
# 逐次更新
# =====================================================================


def test_incremental_update_example(make_cluster):
    c = incremental_update(make_cluster(0, [0.0, 0.0]), np.array([2.0, 2.0]), tick=1)
    np.testing.assert_allclose(c.mu, [1.0, 1.0])
    np.testing.assert_allclose(c.scatter, [[2.0, 2.0], [2.0, 2.0]])
    assert c.n == 2
    assert c.last_activation == 1


def test_update_at_center_only_counts(make_cluster):
    c = make_cluster(0, [1.0, 2.0], n=3, scatter=np.eye(2))
    incremental_update(c, np.array([1.0, 2.0]), tick=5)
    np.testing.assert_array_equal(c.mu, [1.0, 2.0])
    np.testing.assert_array_equal(c.scatter, np.eye(2))
    assert c.n == 4


def test_incremental_matches_batch(rng):
    points = rng.normal(loc=[3.0, -1.0, 10.0], scale=[1.0, 5.0, 0.1], size=(1000, 3))
    c = _absorb(points)
    scale = np.abs(points).max()
    assert c.n == 1000
    np.testing.assert_allclose(c.mu, points.mean(axis=0), rtol=0, atol=1e-10 * scale)
    np.testing.assert_allclose(c.scatter / (c.n - 1), np.cov(points.T), rtol=1e-10, atol=1e-10 * scale)
    np.testing.assert_array_equal(c.scatter, c.scatter.T)


@pytest.mark.parametrize("dim", [1, 2, 5, 16])
def test_incremental_matches_batch_random_sequences(dim):
    rng = np.random.default_rng(dim)
    for _ in range(25):
        n = int(rng.integers(2, 1001))
        points = rng.normal(size=(n, dim)) * rng.uniform(0.1, 5.0, size=dim)
        c = _absorb(points)
        np.testing.assert_allclose(c.mu, points.mean(axis=0), rtol=1e-10, atol=1e-12)
        expected = np.atleast_2d(np.cov(points.T))
        np.testing.assert_allclose(c.scatter / (n - 1), expected, rtol=1e-10, atol=1e-11)


def test_tick_must_not_go_backwards(make_cluster):
    c = make_cluster(0, [0.0, 0.0], last_activation=10)
    with pytest.raises(RejectedSampleError):
        incremental_update(c, np.ones(2), tick=9)


# =====================================================================
# 体積
# =====================================================================


def test_log_volume_examples():
    assert log_volume(np.eye(2), 2) == pytest.approx(math.log(math.pi))
    assert log_volume(np.diag([4.0, 4.0]), 2) == pytest.approx(math.log(4 * math.pi))
    assert log_volume(np.eye(1), 1) == pytest.approx(math.log(2.0))
    assert log_volume(np.diag([4.0, 4.0]), 2, DetMode.LITERAL_DET) == pytest.approx(math.log(16 * math.pi))


def test_log_volume_scaling(rng):
    A = rng.normal(size=(5, 5))
    sigma = A @ A.T + 5 * np.eye(5)
    alpha = 3.0
    delta = log_volume(alpha * sigma, 5) - log_volume(sigma, 5)
    assert delta == pytest.approx(2.5 * math.log(alpha))


def test_log_volume_high_dimension():
    value = log_volume(np.eye(64) * 1e-3, 64)
    assert math.isfinite(value)


# =====================================================================
# 統合
# =====================================================================


NO_PRIOR = PrototypeSpec(sigma2=[1.0, 1.0], n_r=1)


def test_merge_identical_clusters(make_cluster):
    p = make_cluster(0, [0.0, 0.0], n=10, scatter=9 * np.eye(2))
    q = make_cluster(1, [0.0, 0.0], n=10, scatter=9 * np.eye(2))
    merged = merge_pair(p, q, NO_PRIOR, prior_weight=0)
    assert merged.n == 20
    np.testing.assert_allclose(merged.mu, [0.0, 0.0])
    np.testing.assert_allclose(merged.scatter / (merged.n - 1), 18 / 19 * np.eye(2))


def test_merge_two_points(make_cluster):
    p = make_cluster(0, [0.0, 0.0], last_activation=3)
    q = make_cluster(1, [2.0, 0.0], last_activation=8)
    merged = merge_pair(p, q, NO_PRIOR, prior_weight=0)
    np.testing.assert_allclose(merged.mu, [1.0, 0.0])
    np.testing.assert_allclose(merged.scatter, [[2.0, 0.0], [0.0, 0.0]])
    assert merged.last_activation == 8
    assert merged.id == 0


def test_merge_matches_pooled_samples(rng):
    points = rng.normal(size=(200, 3)) * [1.0, 2.0, 0.5] + [0.0, 4.0, -2.0]
    proto = PrototypeSpec(sigma2=np.ones(3), n_r=1)
    merged = merge_pair(_absorb(points[:80], 0), _absorb(points[80:], 1), proto, prior_weight=0)
    assert merged.n == 200
    np.testing.assert_allclose(merged.mu, points.mean(axis=0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(merged.scatter / 199, np.cov(points.T), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 5, 16])
def test_merge_matches_pooled_random_splits(dim):
    rng = np.random.default_rng(100 + dim)
    proto = PrototypeSpec(sigma2=np.ones(dim), n_r=1)
    for _ in range(25):
        n = int(rng.integers(4, 300))
        points = rng.normal(size=(n, dim)) + rng.normal(scale=3.0, size=dim)
        split = int(rng.integers(2, n - 1))
        merged = merge_pair(_absorb(points[:split], 0), _absorb(points[split:], 1), proto, prior_weight=0)
        assert merged.n == n
        np.testing.assert_allclose(merged.mu, points.mean(axis=0), rtol=1e-10, atol=1e-12)
        expected = np.atleast_2d(np.cov(points.T))
        np.testing.assert_allclose(merged.scatter / (n - 1), expected, rtol=1e-10, atol=1e-11)


def test_merge_is_commutative(rng):
    proto = PrototypeSpec(sigma2=[0.5, 2.0], n_r=4)
    p = _absorb(rng.normal(size=(15, 2)), 0)
    q = _absorb(rng.normal(loc=1.0, size=(7, 2)), 1)
    pq = merge_pair(p, q, proto)
    qp = merge_pair(q, p, proto)
    np.testing.assert_allclose(pq.mu, qp.mu, atol=1e-12)
    np.testing.assert_allclose(pq.scatter, qp.scatter, atol=1e-12)


def test_merge_refuses_other_class(make_cluster):
    with pytest.raises(MergeRefusedError):
        merge_pair(make_cluster(0, [0.0, 0.0], class_id=0), make_cluster(1, [0.0, 0.0], class_id=1), NO_PRIOR)
    with pytest.raises(MergeRefusedError):
        merge_pair(make_cluster(0, [0.0, 0.0]), make_cluster(1, [0.0, 0.0, 0.0]), NO_PRIOR)


# =====================================================================
# 重なり比
# =====================================================================


def _one_dim(cluster_id: int, center: float) -> GaussianCluster:
    return GaussianCluster(id=cluster_id, mu=[center], scatter=[[49.0]], n=50)


@pytest.mark.parametrize("delta", [0.0, 0.5, 2.0])
def test_overlap_ratio_one_dimension(delta):
    proto = PrototypeSpec(sigma2=[1.0], n_r=1)
    p, q = _one_dim(0, 0.0), _one_dim(1, delta)
    merged_var = (98 + 25 * delta**2) / 99
    assert overlap_ratio(p, q, proto, prior_weight=0) == pytest.approx(math.sqrt(merged_var) / 2)
    assert overlap_ratio(p, q, proto, DetMode.LITERAL_DET, prior_weight=0) == pytest.approx(merged_var / 2)


def test_overlap_ratio_same_cluster(make_cluster):
    p = make_cluster(0, [1.0, 1.0], n=10, scatter=9 * np.eye(2))
    ratio = overlap_ratio(p, p.model_copy(update={"id": 1}), NO_PRIOR, prior_weight=0)
    assert ratio == pytest.approx(0.5 * 18 / 19)
    assert ratio < 1.5**2


def test_overlap_ratio_far_apart(make_cluster):
    p = make_cluster(0, [0.0, 0.0], n=10, scatter=9 * np.eye(2))
    q = make_cluster(1, [100.0, 0.0], n=10, scatter=9 * np.eye(2))
    assert overlap_ratio(p, q, NO_PRIOR, prior_weight=0) > 1.5**2
