"""
評価指標

正解率、マクロ平均 F1、一対他のマクロ ROC-AUC（平均順位で同順位を処理する
Mann-Whitney 形式）を計算します。
"""

import logging
from typing import Optional

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


def _check_lengths(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape[0] != y_pred.shape[0]:
        raise ValueError(f"長さが一致しません: {y_true.shape[0]} != {y_pred.shape[0]}")
    return y_true, y_pred


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """完全一致の割合"""
    y_true, y_pred = _check_lengths(y_true, y_pred)
    if y_true.size == 0:
        raise ValueError("空のラベルでは正解率を計算できません")
    return float(np.mean(y_true == y_pred))


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> float:
    """
    クラスごとの F1 = 2TP / (2TP + FP + FN) の単純平均

    正解にも予測にも現れないクラスは F1 = 0 として数えます（警告あり）。

    Args:
        y_true: 正解ラベル
        y_pred: 予測ラベル
        n_classes: クラス数 M

    Returns:
        float: [0, 1] のマクロ F1
    """
    y_true, y_pred = _check_lengths(y_true, y_pred)
    scores = []
    for m in range(n_classes):
        tp = int(np.sum((y_true == m) & (y_pred == m)))
        fp = int(np.sum((y_true != m) & (y_pred == m)))
        fn = int(np.sum((y_true == m) & (y_pred != m)))
        denom = 2 * tp + fp + fn
        if denom == 0:
            logger.warning("クラス %d は正解にも予測にも現れないため F1=0 とします", m)
            scores.append(0.0)
        else:
            scores.append(2 * tp / denom)
    return float(np.mean(scores))


def binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """順位和による AUC（同順位は平均順位）"""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc_ovr(y_true: np.ndarray, scores: np.ndarray, n_classes: int) -> float:
    """
    一対他のマクロ平均 ROC-AUC

    正例または負例がないクラスは警告を出して平均から除外します。

    Args:
        y_true: 正解ラベル
        scores: n×M のクラススコア
        n_classes: クラス数 M

    Returns:
        float: [0, 1] の AUC。評価できるクラスがなければ NaN
    """
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (y_true.shape[0], n_classes):
        raise ValueError(f"scores の形状 {scores.shape} が ({y_true.shape[0]}, {n_classes}) と一致しません")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores に非有限値が含まれています")
    aucs = []
    for m in range(n_classes):
        positives = y_true == m
        if positives.all() or not positives.any():
            logger.warning("クラス %d は正例か負例がないため ROC-AUC から除外します", m)
            continue
        aucs.append(binary_auc(positives, scores[:, m]))
    if not aucs:
        return float("nan")
    return float(np.mean(aucs))


def summarize(values: list[Optional[float]]) -> tuple[Optional[float], float]:
    """平均と標準偏差（母標準偏差）。None と NaN は除外"""
    arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return None, 0.0
    return float(arr.mean()), float(arr.std())
