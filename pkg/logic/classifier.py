"""
一対他（One-vs-All）進化型ファジィ分類器

クラスごとに進化型モデルを1つ持ち、各ルールの後件部はクラスのワンホット符号 θ です。
予測は全ルールの中で帰属度が最大（d²/D が最小）のルールのクラスを返します。
特徴量は Fisher スコアで選択し、マスクはウォームアップ後に凍結します。
"""

import logging
from typing import Optional

import numpy as np

from logic.evolve import new_model, process_sample
from logic.gaussian import check_sample, cluster_mahalanobis_sq
from logic.statistics import VARIANCE_FLOOR, safe_variance, welford_update
from models.data_models import (
    ClassEncoding,
    EvolveConfig,
    EvolvingClassifier,
    FisherStats,
)
from models.errors import UnknownClassError, UntrainedClassifierError

logger = logging.getLogger(__name__)

# Fisher スコアの分母の下限
FISHER_FLOOR = 1e-12

# 帰属度スコアの下限（exp のアンダーフロー対策）
SCORE_FLOOR = np.finfo(float).tiny


def new_classifier(
    n_classes: int,
    n_features: int,
    config: EvolveConfig,
    kappa_f: float = 0.0,
    warmup: int = 50,
    sigma2: Optional[np.ndarray] = None,
    fisher: Optional[FisherStats] = None,
) -> EvolvingClassifier:
    """
    空の分類器を作成する

    fisher を渡した場合（統計交換済みのフェデレーション学習）は
    その統計でマスクを即座に凍結し、ウォームアップを行いません。

    Args:
        n_classes: クラス数 M
        n_features: マスク前の特徴量数
        config: 各クラスモデル共通の進化設定
        kappa_f: Fisherスコアの相対閾値
        warmup: マスク凍結までのサンプル数 W
        sigma2: 全体分散（指定時は固定）
        fisher: 事前に集計されたクラス別統計

    Returns:
        EvolvingClassifier: 分類器
    """
    if n_classes < 1:
        raise ValueError("クラス数は1以上である必要があります")
    clf = EvolvingClassifier(
        n_classes=n_classes,
        n_features=n_features,
        config=config,
        encodings=[ClassEncoding.one_hot(m, n_classes) for m in range(n_classes)],
        fisher=fisher if fisher is not None else FisherStats.empty(n_classes, n_features),
        kappa_f=kappa_f,
        warmup=warmup,
        fixed_sigma2=None if sigma2 is None else np.asarray(sigma2, dtype=float),
        track_sigma2=sigma2 is None,
    )
    if fisher is not None:
        freeze_mask(clf)
    return clf


def fisher_scores(fs: FisherStats) -> Optional[np.ndarray]:
    """
    特徴量ごとの Fisher スコア

    score_j = Σ_m n_m (μ_mj - μ_j)² / Σ_m n_m σ²_mj

    2件以上のサンプルを持つクラスだけを使い、それが2クラス未満なら
    None（全特徴量を通すべきという合図）を返します。

    Args:
        fs: クラス別統計

    Returns:
        Optional[np.ndarray]: 非負のスコア、またはデータ不足時 None
    """
    eligible = [s for s in fs.per_class if s.count >= 2]
    if len(eligible) < 2:
        return None
    counts = np.array([s.count for s in eligible], dtype=float)
    means = np.vstack([s.mean for s in eligible])
    variances = np.vstack([s.variance() for s in eligible])

    grand_mean = counts @ means / counts.sum()
    between = counts @ (means - grand_mean) ** 2
    within = counts @ variances
    return between / np.maximum(within, FISHER_FLOOR)


def select_features(scores: Optional[np.ndarray], kappa_f: float, n_features: Optional[int] = None) -> np.ndarray:
    """
    スコアが κ_F・max 以上の特徴量を選ぶ

    κ_F = 0 なら全特徴量を残し、すべて落ちる場合は最高スコアの1つを残します。
    scores が None のときは n_features 個すべてを通します。
    """
    if scores is None:
        if n_features is None:
            raise ValueError("scores が None のときは n_features が必要です")
        return np.ones(n_features, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    if kappa_f == 0:
        return np.ones(scores.size, dtype=bool)
    mask = scores >= kappa_f * scores.max()
    if not mask.any():
        mask[int(np.argmax(scores))] = True
    return mask


def update_fisher(fs: FisherStats, x: np.ndarray, y: int) -> FisherStats:
    """クラス別統計と全体統計を1サンプルで更新"""
    welford_update(fs.per_class[y], x)
    welford_update(fs.overall, x)
    return fs


def _class_sigma2(clf: EvolvingClassifier) -> np.ndarray:
    """マスク後の特徴量に対する全体分散"""
    if clf.fixed_sigma2 is not None:
        sigma2 = np.where(clf.fixed_sigma2 > VARIANCE_FLOOR, clf.fixed_sigma2, 1.0)
    else:
        sigma2 = safe_variance(clf.fisher.overall)
    return sigma2[clf.feature_mask]


def freeze_mask(clf: EvolvingClassifier, workers: Optional[int] = None) -> EvolvingClassifier:
    """
    特徴量マスクを凍結し、クラスモデルを作ってウォームアップ分を再生する

    Args:
        clf: 分類器（その場で変更される）
        workers: 重なり評価のワーカー数

    Returns:
        EvolvingClassifier: 凍結後の分類器
    """
    if clf.is_frozen:
        return clf
    scores = fisher_scores(clf.fisher)
    if scores is None:
        logger.info("Fisherスコアに十分なデータがないため全特徴量を使います")
    clf.feature_mask = select_features(scores, clf.kappa_f, clf.n_features)
    logger.info("特徴量マスクを凍結しました: %d/%d 個を使用", int(clf.feature_mask.sum()), clf.n_features)

    sigma2 = _class_sigma2(clf)
    clf.models = [
        new_model(int(clf.feature_mask.sum()), clf.config, sigma2=sigma2.copy(), class_id=m)
        for m in range(clf.n_classes)
    ]
    pending, clf.pending = clf.pending, []
    for x, y in pending:
        _route(clf, x, y, workers)
    return clf


def _route(clf: EvolvingClassifier, x: np.ndarray, y: int, workers: Optional[int]) -> None:
    clf.tick += 1
    if clf.track_sigma2:
        sigma2 = _class_sigma2(clf)
        for model in clf.models:
            model.proto.sigma2 = sigma2
    model = clf.models[y]
    # process_sample が時刻を1つ進める
    model.tick = clf.tick - 1
    process_sample(model, x[clf.feature_mask], workers=workers)


def _check_class(clf: EvolvingClassifier, y: int) -> int:
    if isinstance(y, (bool, np.bool_)) or not isinstance(y, (int, np.integer)):
        raise UnknownClassError(f"クラス番号は整数である必要があります: {y!r}")
    if not 0 <= y < clf.n_classes:
        raise UnknownClassError(f"クラス番号 {y} は [0, {clf.n_classes}) の範囲外です")
    return int(y)


def train_sample(
    clf: EvolvingClassifier,
    x: np.ndarray,
    y: int,
    workers: Optional[int] = None,
) -> EvolvingClassifier:
    """
    1サンプルで分類器を学習する

    Fisher 統計を更新し、マスク後の x をクラス y のモデルにだけ渡します。
    凍結前はサンプルを保留し、W 件たまった時点でマスクを凍結します。

    Args:
        clf: 分類器（その場で変更される）
        x: マスク前のサンプル
        y: クラス番号
        workers: 重なり評価のワーカー数

    Returns:
        EvolvingClassifier: 更新後の分類器
    """
    y = _check_class(clf, y)
    x = check_sample(x, clf.n_features)
    if clf.track_sigma2 or not clf.is_frozen:
        update_fisher(clf.fisher, x, y)

    if not clf.is_frozen:
        clf.pending.append((x, y))
        if len(clf.pending) >= max(clf.warmup, 1):
            freeze_mask(clf, workers)
        return clf

    _route(clf, x, y, workers)
    return clf


def finalize(clf: EvolvingClassifier, workers: Optional[int] = None) -> EvolvingClassifier:
    """ウォームアップ未満で学習が終わった場合もマスクを凍結して保留分を学習する"""
    if not clf.is_frozen:
        freeze_mask(clf, workers)
    return clf


def fit(
    clf: EvolvingClassifier,
    X: np.ndarray,
    y: np.ndarray,
    workers: Optional[int] = None,
) -> EvolvingClassifier:
    """行の順に1パスで学習し、最後に finalize する"""
    X = np.asarray(X, dtype=float)
    for x, label in zip(X, np.asarray(y)):
        train_sample(clf, x, int(label), workers=workers)
    return finalize(clf, workers)


def class_distances(clf: EvolvingClassifier, x: np.ndarray) -> np.ndarray:
    """
    クラスごとに最も近いルールの d²/D を返す

    帰属度 exp(-d²/D) は遠いサンプルで 0 にアンダーフローするため、
    勝者の決定はこちらの値で行います。

    Args:
        clf: 学習済みの分類器
        x: マスク前のサンプル

    Returns:
        np.ndarray: 長さ M、各要素は 0 以上
    """
    if not clf.is_frozen:
        raise UntrainedClassifierError("分類器がまだ学習されていません（特徴量マスク未凍結）")
    empty = [m for m, model in enumerate(clf.models) if not model.clusters]
    if empty:
        raise UntrainedClassifierError(f"クラスタを持たないクラスがあります: {empty}")
    x = check_sample(x, clf.n_features)[clf.feature_mask]
    distances = np.empty(clf.n_classes)
    for m, model in enumerate(clf.models):
        prior = model.config.prior_weight
        distances[m] = min(cluster_mahalanobis_sq(x, c, model.proto, prior) for c in model.clusters) / model.dim
    return distances


def predict_scores(clf: EvolvingClassifier, x: np.ndarray) -> np.ndarray:
    """
    クラスごとの最大帰属度を返す

    0 へのアンダーフローは最小の正の浮動小数点数で止めます。

    Returns:
        np.ndarray: 長さ M、各要素は (0, 1]
    """
    return np.maximum(np.exp(-class_distances(clf, x)), SCORE_FLOOR)


def predict(clf: EvolvingClassifier, x: np.ndarray) -> int:
    """d²/D が最小のルールのクラス（同値なら小さいクラス番号）"""
    distances = class_distances(clf, x)
    return clf.encodings[int(np.argmin(distances))].decode()


def class_distances_batch(clf: EvolvingClassifier, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.vstack([class_distances(clf, x) for x in X]) if len(X) else np.empty((0, clf.n_classes))


def predict_scores_batch(clf: EvolvingClassifier, X: np.ndarray) -> np.ndarray:
    return np.maximum(np.exp(-class_distances_batch(clf, X)), SCORE_FLOOR)


def predict_batch(clf: EvolvingClassifier, X: np.ndarray) -> np.ndarray:
    distances = class_distances_batch(clf, X)
    return np.argmin(distances, axis=1) if len(distances) else np.empty(0, dtype=int)


def n_clusters(clf: EvolvingClassifier) -> int:
    """全クラスのクラスタ数の合計"""
    return sum(model.n_clusters for model in clf.models)
