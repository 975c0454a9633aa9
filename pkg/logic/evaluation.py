"""
分類ベンチマークの評価

K 分割交差検証 × 繰り返しの各フォールドでフェデレーション学習を1ラウンド行い、
大域分類器を評価フォールドで評価して平均 ± 標準偏差にまとめます。
フォールドは並列に実行できますが、結果は (繰り返し, フォールド) の順に並べ直します。
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from data.datasets import kfold_split
from logic.classifier import class_distances_batch, n_clusters
from logic.federated import run_round, transform
from logic.metrics import accuracy, macro_f1, roc_auc_ovr, summarize
from logic.settings import get_settings
from models.data_models import (
    Dataset,
    DetMode,
    EvalReport,
    EvolveConfig,
    FoldResult,
    MetricSummary,
    RunManifest,
)
from models.errors import DatasetError

logger = logging.getLogger(__name__)

# tune の既定の探索範囲
DEFAULT_NR_GRID = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def owner_config(manifest: RunManifest) -> EvolveConfig:
    """実行条件から所有者の進化設定を作る"""
    return EvolveConfig(
        n_r=manifest.n_r,
        kappa_m=manifest.kappa_m,
        kappa_n=manifest.kappa_n,
        kappa_v=manifest.kappa_v,
        n_sigma=manifest.n_sigma,
        age_limit=manifest.age_limit,
        age_percentile=manifest.age_percentile,
        age_staleness=manifest.age_staleness,
        prior_weight=manifest.prior_weight,
        det_mode=DetMode(manifest.det_mode),
    )


def server_config(manifest: RunManifest) -> EvolveConfig:
    """所有者の設定にサーバ側の年齢削除の下限を加えた設定"""
    return owner_config(manifest).model_copy(update={"age_limit": manifest.server_age_limit})


def _subset(dataset: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(
        name=dataset.name,
        X=dataset.X[idx],
        y=dataset.y[idx],
        feature_names=dataset.feature_names,
        class_names=dataset.class_names,
    )


def evaluate_fold(
    dataset: Dataset,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    manifest: RunManifest,
    repeat: int,
    fold: int,
    workers: int = 1,
) -> FoldResult:
    """
    1フォールドを学習・評価する

    Args:
        dataset: ラベル付きデータセット（標準化前）
        train_idx: 学習インデックス
        test_idx: 評価インデックス
        manifest: 実行条件
        repeat: 繰り返し番号
        fold: フォールド番号
        workers: フォールド内の並列度

    Returns:
        FoldResult: 指標と学習時間
    """
    train = _subset(dataset, train_idx)
    started = time.perf_counter()
    result = run_round(
        train,
        n_owners=manifest.owners,
        seed=manifest.seed + 1000 * repeat + fold,
        owner_config=owner_config(manifest),
        server_config=server_config(manifest),
        classify=True,
        kappa_f=manifest.kappa_f,
        workers=workers,
    )
    elapsed = time.perf_counter() - started

    clf = result.global_model
    X_test = transform(result, dataset.X[test_idx])
    y_test = dataset.y[test_idx]
    distances = class_distances_batch(clf, X_test)
    y_pred = np.argmin(distances, axis=1)
    # log γ = -d²/D は帰属度と同じ順序でアンダーフローしない
    auc = roc_auc_ovr(y_test, -distances, dataset.n_classes)

    fold_result = FoldResult(
        repeat=repeat,
        fold=fold,
        accuracy=accuracy(y_test, y_pred),
        macro_f1=macro_f1(y_test, y_pred, dataset.n_classes),
        roc_auc_ovr_macro=None if np.isnan(auc) else auc,
        train_time_per_sample_ms=1000.0 * elapsed / max(len(train_idx), 1),
        n_clusters_global=n_clusters(clf),
    )
    logger.info(
        "繰り返し %d / フォールド %d: 正解率 %.4f, クラスタ数 %d",
        repeat, fold, fold_result.accuracy, fold_result.n_clusters_global,
    )
    return fold_result


def _metric(values: list[Optional[float]]) -> MetricSummary:
    mean, std = summarize(values)
    return MetricSummary(mean=mean, std=std)


def summarize_folds(manifest: RunManifest, folds: list[FoldResult]) -> EvalReport:
    """フォールドの結果を平均 ± 標準偏差にまとめる"""
    folds = sorted(folds, key=lambda f: (f.repeat, f.fold))
    return EvalReport(
        manifest=manifest,
        accuracy=_metric([f.accuracy for f in folds]),
        macro_f1=_metric([f.macro_f1 for f in folds]),
        roc_auc_ovr_macro=_metric([f.roc_auc_ovr_macro for f in folds]),
        train_time_per_sample_ms=_metric([f.train_time_per_sample_ms for f in folds]),
        n_clusters_global=_metric([float(f.n_clusters_global) for f in folds]),
        folds=folds,
    )


def evaluate(dataset: Dataset, manifest: RunManifest, workers: Optional[int] = None) -> EvalReport:
    """
    K 分割 × 繰り返しの評価を実行する

    Args:
        dataset: ラベル付きデータセット
        manifest: 実行条件（folds, repeats, seed など）
        workers: フォールドを並列に実行するスレッド数

    Returns:
        EvalReport: 評価レポート
    """
    if dataset.y is None:
        raise DatasetError(f"分類の評価にはラベルが必要です: {dataset.name}")
    if workers is None:
        workers = get_settings().workers

    tasks = []
    for repeat in range(manifest.repeats):
        splits = kfold_split(dataset.n_samples, manifest.folds, manifest.seed + repeat, y=dataset.y)
        for fold, (train_idx, test_idx) in enumerate(splits):
            tasks.append((repeat, fold, train_idx, test_idx))
    logger.info("%s: %d フォールドを評価します（並列度 %d）", dataset.name, len(tasks), workers)

    def run(task: tuple) -> FoldResult:
        repeat, fold, train_idx, test_idx = task
        return evaluate_fold(dataset, train_idx, test_idx, manifest, repeat, fold, workers=1)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]
    return summarize_folds(manifest, results)


def tune_n_r(
    dataset: Dataset,
    manifest: RunManifest,
    grid: tuple[float, ...] = DEFAULT_NR_GRID,
    workers: Optional[int] = None,
) -> tuple[float, dict[float, Optional[float]]]:
    """
    N_r をグリッド探索する（平均正解率が最大の値、同値なら小さい N_r）

    Returns:
        tuple[float, dict[float, Optional[float]]]: (最良の N_r, N_r ごとの平均正解率)
    """
    table: dict[float, Optional[float]] = {}
    for n_r in grid:
        report = evaluate(dataset, manifest.model_copy(update={"n_r": n_r}), workers=workers)
        table[n_r] = report.accuracy.mean
        logger.info("N_r=%g: 平均正解率 %s", n_r, report.accuracy.mean)
    best = max(sorted(table), key=lambda n_r: (table[n_r] or 0.0, -n_r))
    return best, table
