"""
要約統計ロジック

Welford法による逐次更新と、並列分散アルゴリズムによる要約統計の結合。
生データを共有せずに全体の分散 σ² を推定するために使います。
"""

import numpy as np

from models.data_models import StatsSummary

# 分散がこれ以下の特徴量は定数とみなす
VARIANCE_FLOOR = 1e-12


def local_stats(X: np.ndarray) -> StatsSummary:
    """
    手元のデータから要約統計を計算する

    Args:
        X: n×D の特徴量行列

    Returns:
        StatsSummary: 件数・平均・偏差平方和
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X は2次元行列である必要があります")
    if X.shape[0] == 0:
        return StatsSummary.empty(X.shape[1])
    mean = X.mean(axis=0)
    m2 = ((X - mean) ** 2).sum(axis=0)
    return StatsSummary(count=X.shape[0], mean=mean, m2=m2)


def combine_stats(a: StatsSummary, b: StatsSummary) -> StatsSummary:
    """
    2つの要約統計を結合する（Chan らの並列アルゴリズム）

    Args:
        a: 1つ目の統計
        b: 2つ目の統計

    Returns:
        StatsSummary: 両方のデータをまとめた統計
    """
    if a.dim != b.dim:
        raise ValueError(f"次元が一致しません: {a.dim} != {b.dim}")
    if b.count == 0:
        return a.model_copy(deep=True)
    if a.count == 0:
        return b.model_copy(deep=True)

    n = a.count + b.count
    delta = b.mean - a.mean
    mean = (a.count * a.mean + b.count * b.mean) / n
    m2 = a.m2 + b.m2 + delta**2 * a.count * b.count / n
    return StatsSummary(count=n, mean=mean, m2=m2)


def combine_all(stats: list[StatsSummary]) -> StatsSummary:
    """統計のリストを左から順に結合"""
    if not stats:
        raise ValueError("結合する統計がありません")
    total = stats[0]
    for s in stats[1:]:
        total = combine_stats(total, s)
    return total


def welford_update(stats: StatsSummary, x: np.ndarray) -> StatsSummary:
    """1サンプルで統計をその場で更新（Welford法）"""
    stats.count += 1
    delta = x - stats.mean
    stats.mean = stats.mean + delta / stats.count
    stats.m2 = stats.m2 + delta * (x - stats.mean)
    return stats


def safe_variance(stats: StatsSummary) -> np.ndarray:
    """
    プロトタイプ共分散に使える分散を返す

    2件未満、または定数の特徴量は単位分散で代用します
    （z-score 済みデータの分散と同じ尺度）。
    """
    var = stats.variance()
    return np.where(np.isfinite(var) & (var > VARIANCE_FLOOR), var, 1.0)
