"""
モデルスナップショットの保存と読み込み

所有者とサーバの間で交換する ModelSnapshot の正準 JSON 表現と、
ファイルドロップ用ディレクトリへの書き出し・読み込みを提供します。
浮動小数点は最短の往復可能表現で書き出すため、読み戻すとビット単位で一致します。
"""

import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from logic.gaussian import effective_covariance
from models.data_models import (
    SNAPSHOT_FORMAT_VERSION,
    ClassEncoding,
    ClusterRecord,
    EvolvingClassifier,
    EvolvingModel,
    FisherStats,
    GaussianCluster,
    ModelSnapshot,
    PrototypeRecord,
    PrototypeSpec,
)
from models.errors import DegenerateClusterError, SnapshotError, UntrainedClassifierError

logger = logging.getLogger(__name__)

# スナップショットファイルの拡張子
SNAPSHOT_SUFFIX = ".fedevo.json"

# 対称性の許容誤差（max|S| に対する相対値）
SYMMETRY_TOLERANCE = 1e-12

Model = Union[EvolvingModel, EvolvingClassifier]


def _cluster_record(c: GaussianCluster, proto: PrototypeSpec, prior_weight: float) -> ClusterRecord:
    try:
        sigma_eff = effective_covariance(c, proto, prior_weight)
    except DegenerateClusterError:
        # 事前重み0で n=1 のクラスタは誕生時の共分散を記録する
        sigma_eff = proto.covariance()
    return ClusterRecord(
        id=c.id,
        mu=c.mu.tolist(),
        sigma_eff=sigma_eff.tolist(),
        scatter=c.scatter.tolist(),
        n=c.n,
        last_activation=c.last_activation,
        class_id=c.class_id,
    )


def to_snapshot(model: Model, owner_id: str = "local") -> ModelSnapshot:
    """
    モデルまたは分類器をスナップショットに変換する

    Args:
        model: 純粋なクラスタリングモデル、または凍結済みの分類器
        owner_id: 送信元の識別子

    Returns:
        ModelSnapshot: 転送形式
    """
    if isinstance(model, EvolvingClassifier):
        if not model.is_frozen:
            raise UntrainedClassifierError("特徴量マスクが凍結されていない分類器は送信できません")
        first = model.models[0]
        clusters = [
            _cluster_record(c, m.proto, m.config.prior_weight)
            for m in model.models
            for c in m.clusters
        ]
        return ModelSnapshot(
            format_version=SNAPSHOT_FORMAT_VERSION,
            D=first.dim,
            M=model.n_classes,
            config=model.config,
            proto=PrototypeRecord(sigma2=first.proto.sigma2.tolist(), n_r=first.proto.n_r),
            clusters=clusters,
            owner_id=owner_id,
            tick=model.tick,
            feature_mask=[bool(v) for v in model.feature_mask],
            kappa_f=model.kappa_f,
        )

    return ModelSnapshot(
        format_version=SNAPSHOT_FORMAT_VERSION,
        D=model.dim,
        M=0,
        config=model.config,
        proto=PrototypeRecord(sigma2=model.proto.sigma2.tolist(), n_r=model.proto.n_r),
        clusters=[_cluster_record(c, model.proto, model.config.prior_weight) for c in model.clusters],
        owner_id=owner_id,
        tick=model.tick,
    )


def _check_symmetric(matrix: np.ndarray, what: str) -> None:
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if float(np.max(np.abs(matrix - matrix.T), initial=0.0)) > SYMMETRY_TOLERANCE * scale:
        raise SnapshotError(f"{what} が対称ではありません")


def _to_cluster(record: ClusterRecord, dim: int) -> GaussianCluster:
    where = f"クラスタ {record.id}"
    mu = np.array(record.mu, dtype=float)
    scatter = np.array(record.scatter, dtype=float)
    sigma_eff = np.array(record.sigma_eff, dtype=float)
    if mu.shape != (dim,) or scatter.shape != (dim, dim) or sigma_eff.shape != (dim, dim):
        raise SnapshotError(f"{where} の形状が D={dim} と一致しません")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(scatter)) and np.all(np.isfinite(sigma_eff))):
        raise SnapshotError(f"{where} に非有限値が含まれています")
    _check_symmetric(scatter, f"{where} の scatter")
    _check_symmetric(sigma_eff, f"{where} の sigma_eff")
    if record.n == 1 and np.any(scatter != 0):
        raise SnapshotError(f"{where} は n=1 ですが scatter がゼロ行列ではありません")
    return GaussianCluster(
        id=record.id,
        mu=mu,
        scatter=scatter,
        n=record.n,
        last_activation=record.last_activation,
        class_id=record.class_id,
    )


def _check_header(snap: ModelSnapshot) -> None:
    if snap.format_version != SNAPSHOT_FORMAT_VERSION:
        raise SnapshotError(
            f"未対応のフォーマットバージョンです: {snap.format_version}"
            f"（対応: {SNAPSHOT_FORMAT_VERSION}）"
        )
    if len(snap.proto.sigma2) != snap.D:
        raise SnapshotError(f"proto.sigma2 の長さ {len(snap.proto.sigma2)} が D={snap.D} と一致しません")
    if snap.M == 0:
        if snap.feature_mask is not None:
            raise SnapshotError("M=0 のスナップショットは feature_mask を持てません")
        if any(r.class_id is not None for r in snap.clusters):
            raise SnapshotError("M=0 のスナップショットにクラス付きのクラスタがあります")
    else:
        if snap.feature_mask is None or sum(snap.feature_mask) != snap.D:
            raise SnapshotError("feature_mask の有効な特徴量数が D と一致しません")
        bad = [r.id for r in snap.clusters if r.class_id is None or r.class_id >= snap.M]
        if bad:
            raise SnapshotError(f"クラスが [0, {snap.M}) の範囲外のクラスタがあります: {bad}")
    seen: set[tuple[Optional[int], int]] = set()
    for r in snap.clusters:
        key = (r.class_id, r.id)
        if key in seen:
            raise SnapshotError(f"クラスタIDが重複しています: {r.id} (class={r.class_id})")
        seen.add(key)


def _model_from_clusters(
    clusters: list[GaussianCluster],
    snap: ModelSnapshot,
    proto: PrototypeSpec,
    class_id: Optional[int],
) -> EvolvingModel:
    return EvolvingModel(
        clusters=clusters,
        proto=proto.model_copy(deep=True),
        config=snap.config,
        tick=snap.tick,
        next_id=max((c.id for c in clusters), default=-1) + 1,
        sigma2_fixed=True,
        running=None,
        class_id=class_id,
    )


def from_snapshot(snap: ModelSnapshot) -> Model:
    """
    スナップショットからモデルを復元する

    M=0 なら EvolvingModel、M>0 なら EvolvingClassifier を返します。
    復元したモデルの σ² は固定扱いです。

    Raises:
        SnapshotError: バージョン不一致・形状不一致・非対称な行列
    """
    _check_header(snap)
    try:
        proto = PrototypeSpec(sigma2=snap.proto.sigma2, n_r=snap.proto.n_r)
    except ValidationError as e:
        raise SnapshotError(f"proto が不正です: {e}") from e
    clusters = [_to_cluster(r, snap.D) for r in snap.clusters]
    for c in clusters:
        if c.last_activation > snap.tick:
            raise SnapshotError(f"クラスタ {c.id} の last_activation が tick={snap.tick} より新しいです")

    if snap.M == 0:
        return _model_from_clusters(clusters, snap, proto, None)

    mask = np.array(snap.feature_mask, dtype=bool)
    fixed = np.ones(mask.size)
    fixed[mask] = proto.sigma2
    return EvolvingClassifier(
        n_classes=snap.M,
        n_features=int(mask.size),
        config=snap.config,
        models=[
            _model_from_clusters([c for c in clusters if c.class_id == m], snap, proto, m)
            for m in range(snap.M)
        ],
        encodings=[ClassEncoding.one_hot(m, snap.M) for m in range(snap.M)],
        fisher=FisherStats.empty(snap.M, int(mask.size)),
        kappa_f=snap.kappa_f or 0.0,
        feature_mask=mask,
        warmup=0,
        fixed_sigma2=fixed,
        tick=snap.tick,
        track_sigma2=False,
    )


def snapshot_to_bytes(snap: ModelSnapshot) -> bytes:
    """正準 JSON（キー順は型定義順、空白なし、UTF-8）"""
    payload = snap.model_dump(mode="json")
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def snapshot_from_bytes(data: bytes) -> ModelSnapshot:
    """バイト列をスナップショットとして検証する（失敗時は部分的なモデルを返さない）"""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SnapshotError(f"スナップショットを JSON として読めません: {e}") from e
    if isinstance(payload, dict) and payload.get("format_version") not in (None, SNAPSHOT_FORMAT_VERSION):
        raise SnapshotError(f"未対応のフォーマットバージョンです: {payload.get('format_version')}")
    try:
        return ModelSnapshot.model_validate(payload)
    except ValidationError as e:
        raise SnapshotError(f"スナップショットのスキーマ違反: {e.error_count()} 件\n{e}") from e


def serialize(model: Model, owner_id: str = "local") -> bytes:
    """モデルを転送用バイト列に変換"""
    return snapshot_to_bytes(to_snapshot(model, owner_id))


def deserialize(data: bytes) -> Model:
    """転送用バイト列からモデルを復元"""
    return from_snapshot(snapshot_from_bytes(data))


def save_snapshot(data: bytes, directory: Path, owner_id: str) -> Path:
    """
    スナップショットをファイルドロップ用ディレクトリに書き出す

    Returns:
        Path: 書き出したファイル（<owner_id>.fedevo.json）
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{owner_id}{SNAPSHOT_SUFFIX}"
    path.write_bytes(data)
    logger.info("スナップショットを保存しました: %s", path)
    return path


def load_snapshot_files(directory: Path) -> list[tuple[Path, ModelSnapshot]]:
    """ディレクトリ内のスナップショットをファイル名順にすべて読み込む"""
    directory = Path(directory)
    if not directory.is_dir():
        raise SnapshotError(f"スナップショットのディレクトリが見つかりません: {directory}")
    paths = sorted(directory.glob(f"*{SNAPSHOT_SUFFIX}"))
    if not paths:
        raise SnapshotError(f"スナップショットがありません: {directory}")
    snapshots = []
    for path in paths:
        try:
            snapshots.append((path, snapshot_from_bytes(path.read_bytes())))
        except SnapshotError as e:
            raise SnapshotError(f"{path.name}: {e}") from e
    logger.info("%d 件のスナップショットを読み込みました: %s", len(snapshots), directory)
    return snapshots
