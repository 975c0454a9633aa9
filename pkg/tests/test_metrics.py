"""
評価指標のテスト
"""

import logging
import math

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from logic.metrics import accuracy, binary_auc, macro_f1, roc_auc_ovr, summarize


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_macro_f1_examples():
    assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0
    # クラス1: TP=1 FP=1 FN=1、クラス0 も対称
    assert macro_f1([1, 1, 0, 0], [1, 0, 1, 0], 2) == pytest.approx(0.5)


def test_macro_f1_absent_class(caplog):
    with caplog.at_level(logging.WARNING):
        value = macro_f1([0, 1], [0, 1], 3)
    assert value == pytest.approx(2 / 3)
    assert "クラス 2" in caplog.text


def test_auc_examples():
    y = np.array([0, 0, 1, 1])
    assert binary_auc(y == 1, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
    assert binary_auc(y == 1, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0
    assert binary_auc(y == 1, np.array([0.5, 0.5, 0.5, 0.5])) == 0.5
    assert binary_auc(y == 1, np.array([0.1, 0.4, 0.35, 0.8])) == 0.75


def test_roc_auc_ovr_macro():
    y = np.array([0, 0, 1, 1])
    scores = np.column_stack([[0.9, 0.6, 0.65, 0.2], [0.1, 0.4, 0.35, 0.8]])
    assert roc_auc_ovr(y, scores, 2) == pytest.approx(0.75)


def test_roc_auc_is_invariant_to_monotone_transform(rng):
    y = rng.integers(0, 3, size=60)
    scores = rng.uniform(size=(60, 3))
    base = roc_auc_ovr(y, scores, 3)
    assert roc_auc_ovr(y, np.exp(5 * scores), 3) == pytest.approx(base)
    assert roc_auc_ovr(y, scores**3 + 2, 3) == pytest.approx(base)


def test_roc_auc_skips_missing_class(caplog):
    y = np.array([0, 0, 1, 1])
    scores = np.column_stack([[0.9, 0.8, 0.2, 0.1], [0.1, 0.2, 0.8, 0.9], [0.3, 0.3, 0.3, 0.3]])
    with caplog.at_level(logging.WARNING):
        assert roc_auc_ovr(y, scores, 3) == 1.0
    assert "クラス 2" in caplog.text
    assert math.isnan(roc_auc_ovr(np.zeros(3, dtype=int), np.ones((3, 1)), 1))


def test_roc_auc_rejects_bad_scores():
    with pytest.raises(ValueError):
        roc_auc_ovr(np.array([0, 1]), np.array([[np.nan, 1.0], [0.0, 1.0]]), 2)
    with pytest.raises(ValueError):
        roc_auc_ovr(np.array([0, 1]), np.ones((2, 3)), 2)


def test_summarize():
    assert summarize([1.0, 3.0]) == (2.0, 1.0)
    assert summarize([0.5, None, float("nan")]) == (0.5, 0.0)
    assert summarize([None]) == (None, 0.0)


def test_roc_auc_agrees_with_sklearn(rng):
    y = np.repeat([0, 1, 2], 20)
    scores = rng.uniform(size=(60, 3))
    scores /= scores.sum(axis=1, keepdims=True)
    expected = roc_auc_score(y, scores, multi_class="ovr", average="macro")
    assert roc_auc_ovr(y, scores, 3) == pytest.approx(expected, abs=1e-12)
    assert binary_auc(y == 1, scores[:, 1]) == pytest.approx(roc_auc_score(y == 1, scores[:, 1]), abs=1e-12)
