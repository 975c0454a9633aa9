"""
分類ベンチマーク評価のテスト
"""

import numpy as np
import pytest

from logic.evaluation import evaluate, owner_config, server_config, summarize_folds, tune_n_r
from models.data_models import Dataset, DetMode, FoldResult, RunManifest
from models.errors import DatasetError


@pytest.fixture
def toy(two_class_data) -> Dataset:
    X, y = two_class_data
    return Dataset(name="toy", X=X, y=y, class_names=["a", "b"])


@pytest.fixture
def manifest() -> RunManifest:
    return RunManifest(
        subcommand="classify", dataset="toy", n_r=4, kappa_m=1.5, kappa_n=1, kappa_v=10,
        folds=3, repeats=2, seed=0,
    )


def test_configs_from_manifest(manifest):
    owner = owner_config(manifest)
    server = server_config(manifest)
    assert owner.n_r == 4
    assert owner.age_limit is None
    assert owner.det_mode is DetMode.SQRT_DET
    assert server.age_limit is None
    assert server_config(manifest.model_copy(update={"server_age_limit": 500})).age_limit == 500
    assert server.age_staleness == owner.age_staleness == 0.5
    assert server.model_copy(update={"age_limit": None}) == owner


def test_evaluate_toy(toy, manifest):
    report = evaluate(toy, manifest, workers=1)
    assert [(f.repeat, f.fold) for f in report.folds] == [(r, k) for r in range(2) for k in range(3)]
    assert report.accuracy.mean >= 0.95
    assert report.macro_f1.mean >= 0.95
    assert report.roc_auc_ovr_macro.mean >= 0.95
    assert report.n_clusters_global.mean >= 2
    assert report.accuracy.std >= 0


def test_parallel_folds_match_sequential(toy, manifest):
    sequential = evaluate(toy, manifest, workers=1)
    parallel = evaluate(toy, manifest, workers=3)
    exclude = {"train_time_per_sample_ms": True, "folds": {"__all__": {"train_time_per_sample_ms"}}}
    assert parallel.model_dump(exclude=exclude) == sequential.model_dump(exclude=exclude)


def test_evaluate_needs_labels(manifest, rng):
    with pytest.raises(DatasetError):
        evaluate(Dataset(name="x", X=rng.normal(size=(10, 2))), manifest)


def test_summarize_folds_without_auc(manifest):
    folds = [
        FoldResult(repeat=0, fold=1, accuracy=0.5, macro_f1=0.4, roc_auc_ovr_macro=None,
                   train_time_per_sample_ms=1.0, n_clusters_global=3),
        FoldResult(repeat=0, fold=0, accuracy=1.0, macro_f1=1.0, roc_auc_ovr_macro=0.9,
                   train_time_per_sample_ms=3.0, n_clusters_global=5),
    ]
    report = summarize_folds(manifest, folds)
    assert [f.fold for f in report.folds] == [0, 1]
    assert report.accuracy.mean == pytest.approx(0.75)
    assert report.accuracy.std == pytest.approx(0.25)
    assert report.roc_auc_ovr_macro.mean == pytest.approx(0.9)
    assert report.n_clusters_global.mean == pytest.approx(4.0)


def test_tune_prefers_smaller_on_tie(toy, manifest):
    best, table = tune_n_r(toy, manifest.model_copy(update={"repeats": 1}), grid=(8.0, 2.0), workers=1)
    assert set(table) == {2.0, 8.0}
    if table[2.0] == table[8.0]:
        assert best == 2.0
    else:
        assert best == max(table, key=table.get)
    assert np.isfinite(table[best])
