"""
スナップショットの保存と読み込みのテスト
"""

import json

import numpy as np
import pytest

from data.datasets import load_dataset, standardize
from database.snapshot_store import (
    SNAPSHOT_SUFFIX,
    deserialize,
    from_snapshot,
    load_snapshot_files,
    save_snapshot,
    serialize,
    snapshot_from_bytes,
    to_snapshot,
)
from logic.classifier import fit, new_classifier, predict_batch, predict_scores_batch
from logic.evolve import fit_stream, new_model
from models.data_models import EvolveConfig, EvolvingClassifier, EvolvingModel
from models.errors import SnapshotError, UntrainedClassifierError


@pytest.fixture
def trained_model(rng) -> EvolvingModel:
    X = rng.normal(size=(150, 3)) * [1.0, 0.3, 2.0]
    return fit_stream(new_model(3, EvolveConfig(n_r=6), sigma2=np.array([1.0, 0.09, 4.0])), X)


@pytest.fixture(scope="module")
def iris_classifier() -> tuple[EvolvingClassifier, np.ndarray]:
    iris = load_dataset("iris")
    X = standardize(iris.X)
    order = np.random.default_rng(3).permutation(iris.n_samples)
    clf = fit(new_classifier(3, 4, EvolveConfig(n_r=16)), X[order], iris.y[order])
    return clf, X


def _payload(model) -> dict:
    return json.loads(serialize(model).decode("utf-8"))


# =====================================================================
# 往復
# =====================================================================


def test_empty_model_round_trip():
    model = new_model(2, EvolveConfig(n_r=4), sigma2=np.ones(2))
    restored = deserialize(serialize(model))
    assert isinstance(restored, EvolvingModel)
    assert restored.n_clusters == 0
    assert restored.dim == 2


def test_round_trip_is_bit_exact(trained_model):
    restored = deserialize(serialize(trained_model))
    assert restored.tick == trained_model.tick
    assert restored.sigma2_fixed
    for a, b in zip(trained_model.clusters, restored.clusters):
        assert a.id == b.id
        assert a.n == b.n
        assert a.last_activation == b.last_activation
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.scatter, b.scatter)
    np.testing.assert_array_equal(trained_model.proto.sigma2, restored.proto.sigma2)


def test_serialize_is_byte_stable(trained_model):
    data = serialize(trained_model, "owner-0")
    assert serialize(deserialize(data), "owner-0") == data


def test_canonical_encoding(trained_model):
    data = serialize(trained_model)
    assert b" " not in data
    payload = json.loads(data)
    assert list(payload)[:3] == ["format_version", "D", "M"]
    assert payload["M"] == 0
    assert payload["feature_mask"] is None
    assert len(payload["clusters"][0]["sigma_eff"]) == 3


def test_iris_classifier_round_trip(iris_classifier):
    clf, X = iris_classifier
    restored = deserialize(serialize(clf))
    assert isinstance(restored, EvolvingClassifier)
    np.testing.assert_array_equal(predict_scores_batch(restored, X), predict_scores_batch(clf, X))
    np.testing.assert_array_equal(predict_batch(restored, X), predict_batch(clf, X))


def test_training_is_deterministic(iris_classifier):
    clf, X = iris_classifier
    iris = load_dataset("iris")
    order = np.random.default_rng(3).permutation(iris.n_samples)
    again = fit(new_classifier(3, 4, EvolveConfig(n_r=16)), X[order], iris.y[order])
    assert serialize(again) == serialize(clf)


def test_unfrozen_classifier_is_not_sent():
    with pytest.raises(UntrainedClassifierError):
        to_snapshot(new_classifier(2, 2, EvolveConfig(n_r=4)))


# =====================================================================
# 検証
# =====================================================================


def _corrupt(model, mutate) -> bytes:
    payload = _payload(model)
    mutate(payload)
    return json.dumps(payload).encode("utf-8")


def test_corrupted_field_type(trained_model):
    data = _corrupt(trained_model, lambda p: p["clusters"][0].update(n="many"))
    with pytest.raises(SnapshotError):
        deserialize(data)


def test_unknown_version(trained_model):
    data = _corrupt(trained_model, lambda p: p.update(format_version=99))
    with pytest.raises(SnapshotError, match="99"):
        deserialize(data)


def test_unknown_field(trained_model):
    data = _corrupt(trained_model, lambda p: p.update(extra=1))
    with pytest.raises(SnapshotError):
        deserialize(data)


def test_asymmetric_matrix(trained_model):
    def skew(payload):
        scatter = payload["clusters"][0]["scatter"]
        scatter[0][1] += 1.0

    with pytest.raises(SnapshotError, match="対称"):
        deserialize(_corrupt(trained_model, skew))


def test_wrong_shape(trained_model):
    data = _corrupt(trained_model, lambda p: p["clusters"][0].update(mu=[0.0, 0.0]))
    with pytest.raises(SnapshotError):
        deserialize(data)


def test_duplicate_cluster_ids(trained_model):
    def duplicate(payload):
        payload["clusters"].append(dict(payload["clusters"][0]))

    with pytest.raises(SnapshotError, match="重複"):
        deserialize(_corrupt(trained_model, duplicate))


def test_not_json():
    with pytest.raises(SnapshotError):
        snapshot_from_bytes(b"\xff\xfe not json")


def test_from_snapshot_checks_activation_time(trained_model):
    snap = to_snapshot(trained_model)
    snap.tick = 0
    with pytest.raises(SnapshotError):
        from_snapshot(snap)


# =====================================================================
# ファイル
# =====================================================================


def test_save_and_load_directory(tmp_path, trained_model):
    save_snapshot(serialize(trained_model, "owner-1"), tmp_path, "owner-1")
    save_snapshot(serialize(trained_model, "owner-0"), tmp_path, "owner-0")
    files = load_snapshot_files(tmp_path)
    assert [p.name for p, _ in files] == [f"owner-0{SNAPSHOT_SUFFIX}", f"owner-1{SNAPSHOT_SUFFIX}"]
    assert [s.owner_id for _, s in files] == ["owner-0", "owner-1"]


def test_load_reports_bad_file(tmp_path, trained_model):
    save_snapshot(serialize(trained_model), tmp_path, "owner-0")
    (tmp_path / f"owner-1{SNAPSHOT_SUFFIX}").write_text("{}", encoding="utf-8")
    with pytest.raises(SnapshotError, match="owner-1"):
        load_snapshot_files(tmp_path)


def test_load_empty_directory(tmp_path):
    with pytest.raises(SnapshotError):
        load_snapshot_files(tmp_path)
