"""
フェデレーション学習のワークフロー

データ分割 → ラウンド0の統計交換 → 所有者ごとの局所学習 → スナップショット送信 →
サーバでの集約（連結 → 統合 → 削除） → 再配布、の1ラウンドを実行します。
サーバ側のコードは ModelSnapshot と StatsSummary だけを受け取り、生データには触れません。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Union

import numpy as np

from data.datasets import retained_features, zscore
from database.snapshot_store import from_snapshot, serialize, snapshot_from_bytes
from logic.classifier import fisher_scores, fit, new_classifier, select_features
from logic.evolve import candidate_pairs, fit_stream, merge_step, new_model, prune, total_count
from logic.settings import get_settings
from logic.statistics import combine_all, combine_stats, local_stats, safe_variance
from models.data_models import (
    ClassEncoding,
    Dataset,
    EvolveConfig,
    EvolvingClassifier,
    EvolvingModel,
    FederatedPartition,
    FisherStats,
    GaussianCluster,
    ModelSnapshot,
    PrototypeSpec,
    RoundResult,
    RoundStats,
    StatsSummary,
)
from models.errors import AggregationError, DatasetError, PartitionError

logger = logging.getLogger(__name__)

Model = Union[EvolvingModel, EvolvingClassifier]


SERVER_ID = "server"

__all__ = [
    "aggregate",
    "combine_stats",
    "default_server_config",
    "local_stats",
    "owner_round_stats",
    "partition_data",
    "redistribute",
    "run_round",
    "server_combine_stats",
]


def partition_data(n_samples: int, n_owners: int, seed: int) -> FederatedPartition:
    """
    サンプルを所有者へ一様ランダムに分割する

    Args:
        n_samples: サンプル数
        n_owners: 所有者数
        seed: 乱数シード

    Returns:
        FederatedPartition: 互いに素で、大きさの差が1以下のシャード
    """
    if n_owners < 1:
        raise PartitionError(f"所有者数は1以上である必要があります: {n_owners}")
    if n_samples < n_owners:
        raise PartitionError(f"サンプル数 {n_samples} が所有者数 {n_owners} より少ないため分割できません")
    order = np.random.default_rng(seed).permutation(n_samples)
    shards = [sorted(int(i) for i in part) for part in np.array_split(order, n_owners)]
    return FederatedPartition(shards=shards, seed=seed)


def owner_round_stats(X: np.ndarray, y: Optional[np.ndarray] = None, n_classes: int = 0) -> RoundStats:
    """所有者が送信する要約統計（全体とクラス別）"""
    X = np.asarray(X, dtype=float)
    per_class = None
    if y is not None and n_classes > 0:
        y = np.asarray(y, dtype=int)
        per_class = [local_stats(X[y == m]) for m in range(n_classes)]
    return RoundStats(overall=local_stats(X), per_class=per_class)


def server_combine_stats(parts: list[RoundStats]) -> RoundStats:
    """所有者の統計をサーバで結合する"""
    if not parts:
        raise AggregationError("結合する統計がありません")
    overall = combine_all([p.overall for p in parts])
    per_class = None
    if all(p.per_class is not None for p in parts):
        n_classes = len(parts[0].per_class)
        if any(len(p.per_class) != n_classes for p in parts):
            raise AggregationError("所有者間でクラス数が一致しません")
        per_class = [combine_all([p.per_class[m] for p in parts]) for m in range(n_classes)]
    return RoundStats(overall=overall, per_class=per_class)


def default_server_config(owner_config: EvolveConfig, age_limit: Optional[int] = None) -> EvolveConfig:
    """所有者の設定をサーバ用にしたもの（age_limit はサーバでの年齢削除の下限）"""
    return owner_config.model_copy(update={"age_limit": age_limit})


def _check_compatible(snapshots: list[ModelSnapshot]) -> None:
    first = snapshots[0]
    checks = [
        ("D", lambda s: s.D),
        ("M", lambda s: s.M),
        ("feature_mask", lambda s: s.feature_mask),
        ("proto", lambda s: s.proto.model_dump()),
        ("config", lambda s: s.config.model_dump()),
    ]
    for name, key in checks:
        mismatched = [s.owner_id for s in snapshots if key(s) != key(first)]
        if mismatched:
            raise AggregationError(
                f"スナップショットの {name} が一致しません",
                sources=[first.owner_id] + mismatched,
            )


def _pool(snapshots: list[ModelSnapshot], server_config: EvolveConfig) -> EvolvingModel:
    """全クラスタを一意なIDで連結し、時刻を最大ティックにそろえる"""
    global_tick = max(s.tick for s in snapshots)
    first = snapshots[0]
    proto = PrototypeSpec(sigma2=first.proto.sigma2, n_r=first.proto.n_r)
    if server_config.n_r != proto.n_r:
        raise AggregationError(
            f"サーバ設定の N_r={server_config.n_r} がスナップショットの N_r={proto.n_r} と一致しません",
            sources=[s.owner_id for s in snapshots],
        )

    clusters: list[GaussianCluster] = []
    for snap in snapshots:
        owner_model = from_snapshot(snap)
        owner_clusters = (
            [c for m in owner_model.models for c in m.clusters]
            if isinstance(owner_model, EvolvingClassifier)
            else owner_model.clusters
        )
        for c in owner_clusters:
            # 所有者ごとの経過時間を保ったまま全体の時刻に合わせる
            age = snap.tick - c.last_activation
            clusters.append(c.model_copy(update={"id": len(clusters), "last_activation": global_tick - age}))

    return EvolvingModel(
        clusters=clusters,
        proto=proto,
        config=server_config,
        tick=global_tick,
        next_id=len(clusters),
        sigma2_fixed=True,
    )


def _split_classes(pooled: EvolvingModel, first: ModelSnapshot) -> EvolvingClassifier:
    mask = np.array(first.feature_mask, dtype=bool)
    fixed = np.ones(mask.size)
    fixed[mask] = pooled.proto.sigma2
    models = []
    for m in range(first.M):
        members = [c for c in pooled.clusters if c.class_id == m]
        models.append(EvolvingModel(
            clusters=members,
            proto=pooled.proto.model_copy(deep=True),
            config=pooled.config,
            tick=pooled.tick,
            next_id=pooled.next_id,
            sigma2_fixed=True,
            class_id=m,
        ))
    return EvolvingClassifier(
        n_classes=first.M,
        n_features=int(mask.size),
        config=pooled.config,
        models=models,
        encodings=[ClassEncoding.one_hot(m, first.M) for m in range(first.M)],
        fisher=FisherStats.empty(first.M, int(mask.size)),
        kappa_f=first.kappa_f or 0.0,
        feature_mask=mask,
        warmup=0,
        fixed_sigma2=fixed,
        tick=pooled.tick,
        track_sigma2=False,
    )


def aggregate(
    snapshots: list[ModelSnapshot],
    server_config: EvolveConfig,
    workers: Optional[int] = None,
) -> Model:
    """
    所有者のスナップショットを大域モデルに集約する

    (1) 全クラスタを連結（IDを振り直す）(2) 中心間距離で同一クラスの候補対を作る
    (3) 不動点まで統合 (4) κ_n 未満と古いクラスタを削除

    Args:
        snapshots: 所有者のスナップショット（1件以上）
        server_config: サーバ側の進化設定
        workers: 重なり評価のワーカー数

    Returns:
        EvolvingModel | EvolvingClassifier: 大域モデル（M>0 なら分類器）
    """
    if not snapshots:
        raise AggregationError("集約するスナップショットがありません")
    _check_compatible(snapshots)

    pooled = _pool(snapshots, server_config)
    total = sum(r.n for s in snapshots for r in s.clusters)
    if total_count(pooled) != total:
        raise AggregationError("連結後のサンプル数が所有者の合計と一致しません", sources=[s.owner_id for s in snapshots])
    before = pooled.n_clusters

    pairs = candidate_pairs(pooled)
    if pairs:
        merge_step(pooled, pairs, focus=None, workers=workers)
    merged = pooled.n_clusters
    prune(pooled, server=True)
    logger.info(
        "集約: %d 件のスナップショット、クラスタ %d → 統合後 %d → 削除後 %d",
        len(snapshots), before, merged, pooled.n_clusters,
    )

    if snapshots[0].M > 0:
        return _split_classes(pooled, snapshots[0])
    return pooled


def redistribute(global_model: Model, n_owners: int) -> list[Model]:
    """大域モデルの独立したコピーを所有者に配る"""
    if n_owners < 1:
        raise PartitionError(f"所有者数は1以上である必要があります: {n_owners}")
    return [global_model.model_copy(deep=True) for _ in range(n_owners)]


def _fisher_from(stats: RoundStats, kept: np.ndarray) -> FisherStats:
    def subset(s: StatsSummary) -> StatsSummary:
        return StatsSummary(count=s.count, mean=s.mean[kept], m2=s.m2[kept])

    return FisherStats(per_class=[subset(s) for s in stats.per_class], overall=subset(stats.overall))


def run_round(
    dataset: Dataset,
    n_owners: int,
    seed: int,
    owner_config: EvolveConfig,
    server_config: Optional[EvolveConfig] = None,
    classify: bool = False,
    kappa_f: float = 0.0,
    standardize: bool = True,
    workers: Optional[int] = None,
) -> RoundResult:
    """
    1ラウンドのフェデレーション学習を実行する

    統計交換で全体の σ²（分類時は特徴量マスクも）を固定してから各所有者が
    1パスで学習し、シリアライズしたモデルだけをサーバへ渡して集約します。

    Args:
        dataset: 学習データ（分類時はラベル必須）
        n_owners: 所有者数
        seed: 分割のシード
        owner_config: 所有者の進化設定
        server_config: サーバの進化設定（省略時は default_server_config）
        classify: 一対他分類器として学習するか
        kappa_f: Fisherスコアの相対閾値
        standardize: 全体統計で z-score 標準化するか
        workers: 並列度（所有者の並列学習に使う）

    Returns:
        RoundResult: 大域モデル、所有者モデル、分割、結合統計、スナップショット
    """
    if workers is None:
        workers = get_settings().workers
    if server_config is None:
        server_config = default_server_config(owner_config)
    if classify and dataset.y is None:
        raise DatasetError(f"分類にはラベルが必要です: {dataset.name}")

    n_classes = dataset.n_classes if classify else 0
    partition = partition_data(dataset.n_samples, n_owners, seed)
    shards = [np.array(s, dtype=int) for s in partition.shards]

    # ラウンド0: 要約統計だけを交換
    parts = [
        owner_round_stats(dataset.X[idx], None if dataset.y is None else dataset.y[idx], n_classes)
        for idx in shards
    ]
    stats = server_combine_stats(parts)

    if standardize:
        kept = retained_features(stats.overall)
        sigma2 = np.ones(int(kept.sum()))
    else:
        kept = np.ones(dataset.n_features, dtype=bool)
        sigma2 = safe_variance(stats.overall)

    fisher = _fisher_from(stats, kept) if classify else None
    if fisher is not None:
        mask = select_features(fisher_scores(fisher), kappa_f, int(kept.sum()))
        logger.info("統計交換で特徴量マスクを固定しました: %d/%d 個", int(mask.sum()), mask.size)

    def train_owner(i: int) -> tuple[Model, bytes]:
        idx = shards[i]
        X = dataset.X[idx]
        if standardize:
            X, _ = zscore(X, stats.overall, kept=kept)
        inner = 1 if workers > 1 and n_owners > 1 else workers
        if classify:
            model: Model = new_classifier(
                n_classes, int(kept.sum()), owner_config, kappa_f=kappa_f, sigma2=sigma2, fisher=fisher,
            )
            fit(model, X, dataset.y[idx], workers=inner)
        else:
            model = fit_stream(new_model(int(kept.sum()), owner_config, sigma2=sigma2), X, workers=inner)
        owner_id = f"owner-{i}"
        logger.info("%s: %d サンプルで学習しました", owner_id, len(idx))
        return model, serialize(model, owner_id)

    if workers > 1 and n_owners > 1:
        with ThreadPoolExecutor(max_workers=min(workers, n_owners)) as pool:
            trained = list(pool.map(train_owner, range(n_owners)))
    else:
        trained = [train_owner(i) for i in range(n_owners)]

    owners = [model for model, _ in trained]
    snapshots = [data for _, data in trained]

    # サーバ側はバイト列だけを受け取る
    global_model = aggregate([snapshot_from_bytes(b) for b in snapshots], server_config, workers=workers)
    return RoundResult(
        global_model=global_model,
        owners=owners,
        partition=partition,
        stats=stats,
        kept=kept,
        standardized=standardize,
        snapshots=snapshots,
    )


def transform(result: RoundResult, X: np.ndarray) -> np.ndarray:
    """学習時と同じ全体統計で評価データを変換する（評価データの統計は使わない）"""
    X = np.asarray(X, dtype=float)
    if not result.standardized:
        return X
    transformed, _ = zscore(X, result.stats.overall, kept=result.kept)
    return transformed
