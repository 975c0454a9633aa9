"""
ガウスクラスタの数理

マハラノビス距離、帰属度、逐次統計更新、超楕円体体積、
サンプルを使わないクラスタ統合を提供します。
逆行列は一切作らず、解法と対数行列式はすべて Cholesky 分解で行います。
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp

from models.data_models import DetMode, GaussianCluster, PrototypeSpec
from models.errors import DegenerateClusterError, MergeRefusedError, RejectedSampleError

logger = logging.getLogger(__name__)


def _cholesky(sigma: np.ndarray, cluster_id: Optional[int] = None) -> np.ndarray:
    """下三角 Cholesky 因子。正定値でなければ DegenerateClusterError"""
    try:
        return linalg.cholesky(sigma, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise DegenerateClusterError(
            f"共分散行列が正定値ではありません (cluster={cluster_id}): {e}",
            cluster_id=cluster_id,
        ) from e


def check_sample(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise RejectedSampleError(f"サンプルの次元 {x.shape} が D={dim} と一致しません")
    if not np.all(np.isfinite(x)):
        raise RejectedSampleError("サンプルに非有限値が含まれています")
    return x


def pooled_scatter(c: GaussianCluster, proto: PrototypeSpec, prior_weight: float) -> np.ndarray:
    """(n-1)・Σ_eff を返す。n=1 かつ事前重み0のときはゼロ行列"""
    denom = c.n - 1 + prior_weight
    if prior_weight == 0 or denom <= 0:
        return c.scatter.copy()
    return (c.n - 1) / denom * (c.scatter + prior_weight * proto.covariance())


def effective_covariance(
    c: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float = 1.0,
) -> np.ndarray:
    """
    散布行列とプロトタイプ共分散を擬似カウントで混合した実効共分散

    Σ_eff = (S + w・diag(σ²/N_r)) / (n - 1 + w)

    Args:
        c: クラスタ
        proto: プロトタイプ統計
        prior_weight: 擬似カウント w（0 で純粋な標本共分散）

    Returns:
        np.ndarray: D×D の対称正定値行列
    """
    if prior_weight < 0:
        raise ValueError("prior_weight は非負である必要があります")
    if prior_weight == 0 and c.n < 2:
        raise DegenerateClusterError(
            f"n={c.n} のクラスタでは標本共分散が定義されません (cluster={c.id})",
            cluster_id=c.id,
        )
    sigma = _blend(c, proto, prior_weight)
    _cholesky(sigma, c.id)
    return sigma


def _blend(c: GaussianCluster, proto: PrototypeSpec, prior_weight: float) -> np.ndarray:
    sigma = (c.scatter + prior_weight * proto.covariance()) / (c.n - 1 + prior_weight)
    return (sigma + sigma.T) / 2


def cluster_factor(c: GaussianCluster, proto: PrototypeSpec, prior_weight: float) -> np.ndarray:
    """実効共分散の Cholesky 因子（キャッシュ付き）"""
    key = (c.n, prior_weight, proto.n_r, proto.sigma2.tobytes())
    cached = c._factor_cache
    if cached is not None and cached[0] == key:
        return cached[1]
    if prior_weight == 0 and c.n < 2:
        effective_covariance(c, proto, prior_weight)
    factor = _cholesky(_blend(c, proto, prior_weight), c.id)
    c._factor_cache = (key, factor)
    return factor


def _mahalanobis_from_factor(deviation: np.ndarray, factor: np.ndarray) -> float:
    z = linalg.solve_triangular(factor, deviation, lower=True, check_finite=False)
    return float(z @ z)


def mahalanobis_sq(x: np.ndarray, c: GaussianCluster, sigma_eff: np.ndarray) -> float:
    """
    マハラノビス距離の二乗 (x-μ)ᵀ Σ⁻¹ (x-μ)

    Args:
        x: サンプル
        c: クラスタ
        sigma_eff: 実効共分散

    Returns:
        float: 非負の距離二乗
    """
    x = check_sample(x, c.dim)
    factor = _cholesky(sigma_eff, c.id)
    return _mahalanobis_from_factor(x - c.mu, factor)


def membership(x: np.ndarray, c: GaussianCluster, sigma_eff: np.ndarray) -> float:
    """帰属度 γ = exp(-d²/D)"""
    return math.exp(-mahalanobis_sq(x, c, sigma_eff) / c.dim)


def cluster_mahalanobis_sq(
    x: np.ndarray,
    c: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float,
) -> float:
    """キャッシュ済みの因子で d² を計算（x は検証済みとする）"""
    return _mahalanobis_from_factor(x - c.mu, cluster_factor(c, proto, prior_weight))


def cluster_membership(
    x: np.ndarray,
    c: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float,
) -> float:
    return math.exp(-cluster_mahalanobis_sq(x, c, proto, prior_weight) / c.dim)


def incremental_update(c: GaussianCluster, x: np.ndarray, tick: int) -> GaussianCluster:
    """
    サンプル1件でクラスタ統計を逐次更新する

    e = x - μ, μ ← μ + e/(n+1), S ← S + e(x - μ_new)ᵀ, n ← n + 1

    Args:
        c: 更新するクラスタ（その場で変更される）
        x: サンプル
        tick: 現在のサンプル時刻

    Returns:
        GaussianCluster: 更新後のクラスタ
    """
    x = check_sample(x, c.dim)
    if tick < c.last_activation:
        raise RejectedSampleError(
            f"時刻が逆行しています: tick={tick} < last_activation={c.last_activation}"
        )
    e = x - c.mu
    mu_new = c.mu + e / (c.n + 1)
    scatter = c.scatter + np.outer(e, x - mu_new)
    c.mu = mu_new
    c.scatter = (scatter + scatter.T) / 2
    c.n += 1
    c.last_activation = tick
    c.invalidate()
    return c


def log_volume(sigma: np.ndarray, dim: int, det_mode: DetMode = DetMode.SQRT_DET) -> float:
    """
    共分散が表す超楕円体体積の自然対数

    V = 2π^(D/2) / (D・Γ(D/2)) ・ det(Σ)^(1/2)   （sqrt-det）
    V = 2π^(D/2) / (D・Γ(D/2)) ・ det(Σ)         （literal-det）

    Args:
        sigma: 正定値行列
        dim: 次元 D
        det_mode: 行列式の扱い

    Returns:
        float: ln V
    """
    factor = _cholesky(sigma)
    return _log_volume_from_factor(factor, dim, det_mode)


def _log_volume_from_factor(factor: np.ndarray, dim: int, det_mode: DetMode) -> float:
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor))))
    log_coef = math.log(2.0) + 0.5 * dim * math.log(math.pi) - math.log(dim) - float(gammaln(dim / 2))
    if DetMode(det_mode) is DetMode.LITERAL_DET:
        return log_coef + log_det
    return log_coef + 0.5 * log_det


def cluster_log_volume(
    c: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float,
    det_mode: DetMode,
) -> float:
    return _log_volume_from_factor(cluster_factor(c, proto, prior_weight), c.dim, det_mode)


def _merged_moments(
    p: GaussianCluster,
    q: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float,
) -> tuple[int, np.ndarray, np.ndarray]:
    """統合後の (n, μ, 散布行列)。入力は変更しない"""
    if p.dim != q.dim:
        raise MergeRefusedError(f"次元が一致しません: {p.dim} != {q.dim}")
    if p.class_id != q.class_id:
        raise MergeRefusedError(
            f"クラスの異なるクラスタは統合できません: {p.id}(class={p.class_id}) と {q.id}(class={q.class_id})"
        )
    n_pq = p.n + q.n
    mu = (p.n * p.mu + q.n * q.mu) / n_pq
    d = p.mu - q.mu
    scatter = (
        pooled_scatter(p, proto, prior_weight)
        + pooled_scatter(q, proto, prior_weight)
        + (p.n * q.n / n_pq) * np.outer(d, d)
    )
    return n_pq, mu, (scatter + scatter.T) / 2


def merge_pair(
    p: GaussianCluster,
    q: GaussianCluster,
    proto: PrototypeSpec,
    prior_weight: float = 1.0,
    new_id: Optional[int] = None,
) -> GaussianCluster:
    """
    2つのクラスタをサンプルなしで統合する

    μ_pq = (n_p μ_p + n_q μ_q) / n_pq
    (n_pq-1)Σ_pq = (n_p-1)Σ_p + (n_q-1)Σ_q + n_p n_q / n_pq ・ (μ_p-μ_q)(μ_p-μ_q)ᵀ

    Args:
        p: クラスタ
        q: クラスタ
        proto: プロトタイプ統計（実効共分散の計算に使用）
        prior_weight: 擬似カウント
        new_id: 統合後のID（省略時は小さい方のID）

    Returns:
        GaussianCluster: 統合されたクラスタ（入力は変更しない）
    """
    n_pq, mu, scatter = _merged_moments(p, q, proto, prior_weight)
    return GaussianCluster(
        id=min(p.id, q.id) if new_id is None else new_id,
        mu=mu,
        scatter=scatter,
        n=n_pq,
        last_activation=max(p.last_activation, q.last_activation),
        class_id=p.class_id,
    )


def overlap_terms(
    p: GaussianCluster,
    q: GaussianCluster,
    proto: PrototypeSpec,
    det_mode: DetMode = DetMode.SQRT_DET,
    prior_weight: float = 1.0,
) -> tuple[float, float]:
    """
    重なり条件の対数比と統合後の対数体積を返す

    統合後のクラスタは作らず、実効共分散の Cholesky 因子だけを求めます。

    Returns:
        tuple[float, float]: (ln(V_pq / (V_p + V_q)), ln V_pq)
    """
    n_pq, _, scatter = _merged_moments(p, q, proto, prior_weight)
    sigma = (scatter + prior_weight * proto.covariance()) / (n_pq - 1 + prior_weight)
    factor = _cholesky((sigma + sigma.T) / 2, min(p.id, q.id))
    log_v_pq = _log_volume_from_factor(factor, p.dim, det_mode)
    log_v_p = cluster_log_volume(p, proto, prior_weight, det_mode)
    log_v_q = cluster_log_volume(q, proto, prior_weight, det_mode)
    return log_v_pq - float(logsumexp([log_v_p, log_v_q])), log_v_pq


def overlap_ratio(
    p: GaussianCluster,
    q: GaussianCluster,
    proto: PrototypeSpec,
    det_mode: DetMode = DetMode.SQRT_DET,
    prior_weight: float = 1.0,
) -> float:
    """重なり比 V_pq / (V_p + V_q)。統合条件は ratio < κ_m^D"""
    log_ratio, _ = overlap_terms(p, q, proto, det_mode, prior_weight)
    return math.exp(log_ratio)
