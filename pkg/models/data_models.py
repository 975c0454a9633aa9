"""
データモデル定義

Pydanticを使用した型安全なデータ構造を定義します。
数値状態（中心・散布行列など）は numpy 配列で保持し、
シリアライズ時のみリストへ変換します。
"""

from enum import Enum
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    PrivateAttr,
    field_validator,
    model_validator,
)


def _as_float_array(value: object) -> np.ndarray:
    """入力を float64 の numpy 配列（コピー）に変換"""
    return np.array(value, dtype=float)


def _as_mask_array(value: object) -> np.ndarray:
    return np.array(value, dtype=bool)


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]
MaskArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_mask_array),
    PlainSerializer(lambda a: [bool(v) for v in a], return_type=list),
]


class DetMode(str, Enum):
    """超楕円体体積の行列式の扱い"""
    SQRT_DET = "sqrt-det"  # 幾何学的に正しい det(Σ)^(1/2)
    LITERAL_DET = "literal-det"  # 互換モード |Σ|


# =====================================================================
# ガウスクラスタ
# =====================================================================


class PrototypeSpec(BaseModel):
    """プロトタイプ（誕生時）共分散 diag(σ²/N_r) の元になる統計"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sigma2: FloatArray = Field(..., description="全データの特徴量ごとの分散推定 σ²")
    n_r: float = Field(..., gt=0, description="空間の量子化数 N_r")

    @field_validator("sigma2")
    @classmethod
    def _check_sigma2(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1 or v.size == 0:
            raise ValueError("sigma2 は長さ D のベクトルである必要があります")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("sigma2 の全要素は正の有限値である必要があります")
        return v

    @property
    def dim(self) -> int:
        return int(self.sigma2.size)

    def covariance(self) -> np.ndarray:
        """プロトタイプ共分散 diag(σ²/N_r)"""
        return np.diag(self.sigma2 / self.n_r)


class GaussianCluster(BaseModel):
    """ガウスクラスタ（ファジィルールの前件部）

    散布行列 S = Σ(x-μ)(x-μ)ᵀ を保持し、共分散は必要時に導出します。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: int = Field(..., description="クラスタID")
    mu: FloatArray = Field(..., description="中心 μ")
    scatter: FloatArray = Field(..., description="散布行列 S（(n-1)・標本共分散）")
    n: int = Field(1, ge=1, description="サンプル数")
    last_activation: int = Field(0, ge=0, description="最後に更新されたサンプル時刻")
    class_id: Optional[int] = Field(None, ge=0, description="所属クラス（分類時のみ）")

    # Cholesky 因子のキャッシュ（キー, 因子）
    _factor_cache: Optional[tuple] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_shapes(self) -> "GaussianCluster":
        if self.mu.ndim != 1:
            raise ValueError("mu は1次元ベクトルである必要があります")
        d = self.mu.size
        if self.scatter.shape != (d, d):
            raise ValueError(f"scatter の形状 {self.scatter.shape} が ({d}, {d}) と一致しません")
        return self

    @classmethod
    def born_at(
        cls,
        cluster_id: int,
        x: np.ndarray,
        tick: int,
        class_id: Optional[int] = None,
    ) -> "GaussianCluster":
        """サンプル x を中心とする n=1 のクラスタを生成"""
        d = len(x)
        return cls(
            id=cluster_id,
            mu=x,
            scatter=np.zeros((d, d)),
            n=1,
            last_activation=tick,
            class_id=class_id,
        )

    @property
    def dim(self) -> int:
        return int(self.mu.size)

    def invalidate(self) -> None:
        """統計を変更した後にキャッシュを破棄"""
        self._factor_cache = None


# =====================================================================
# 進化型モデル
# =====================================================================


class StatsSummary(BaseModel):
    """特徴量ごとの件数・平均・偏差平方和（並列結合可能な要約統計）"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    count: int = Field(0, ge=0, description="サンプル数")
    mean: FloatArray = Field(..., description="特徴量ごとの平均")
    m2: FloatArray = Field(..., description="特徴量ごとの偏差平方和")

    @classmethod
    def empty(cls, dim: int) -> "StatsSummary":
        return cls(count=0, mean=np.zeros(dim), m2=np.zeros(dim))

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def variance(self) -> np.ndarray:
        """標本分散（n-1 分母）。2件未満なら NaN"""
        if self.count < 2:
            return np.full(self.dim, np.nan)
        return self.m2 / (self.count - 1)


class EvolveConfig(BaseModel):
    """進化型クラスタリングの設定"""
    model_config = ConfigDict(use_enum_values=False)

    n_r: float = Field(..., gt=0, description="量子化数 N_r")
    kappa_m: float = Field(1.5, gt=0, description="重なり条件の閾値 κ_m")
    kappa_n: int = Field(1, ge=1, description="最小サンプル数 κ_n")
    kappa_v: float = Field(10.0, gt=0, description="統合後体積の上限（プロトタイプ体積の倍数）")
    n_sigma: Optional[float] = Field(None, gt=0, description="活性化閾値 N_σ（未指定時は √D）")
    age_limit: Optional[int] = Field(None, ge=1, description="年齢による削除の閾値（ティック、サーバでは下限）")
    age_percentile: float = Field(95.0, gt=0, le=100, description="サーバでの年齢削除のパーセンタイル")
    age_staleness: float = Field(0.5, ge=0, le=1, description="サーバで古いとみなす年齢の下限（大域ティックに対する割合）")
    prior_weight: float = Field(1.0, ge=0, description="プロトタイプ共分散の擬似カウント")
    det_mode: DetMode = Field(DetMode.SQRT_DET, description="体積計算の行列式モード")

    def activation_sq(self, dim: int) -> float:
        """活性化閾値 N_σ² を返す（N_σ=√D のとき丁度 D）"""
        if self.n_sigma is None:
            return float(dim)
        return float(self.n_sigma) ** 2


class EvolvingModel(BaseModel):
    """単一ノードの進化型モデル（ルールベース）"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    clusters: list[GaussianCluster] = Field(default_factory=list)
    proto: PrototypeSpec
    config: EvolveConfig
    tick: int = Field(0, ge=0, description="処理済みサンプル数")
    next_id: int = Field(0, ge=0)
    sigma2_fixed: bool = Field(False, description="σ² を統計交換で固定済みか")
    running: Optional[StatsSummary] = Field(None, description="σ² 推定用の逐次統計")
    class_id: Optional[int] = Field(None, ge=0, description="一対他分類でのクラス")

    # 統合候補対の評価キャッシュ（対 → (キー, 評価値)）
    _pair_cache: dict = PrivateAttr(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.proto.dim

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def allocate_id(self) -> int:
        cluster_id = self.next_id
        self.next_id += 1
        return cluster_id


# =====================================================================
# 分類器
# =====================================================================


class ClassEncoding(BaseModel):
    """クラスのワンホット符号 θ"""
    theta: list[int] = Field(..., description="長さ M の二値ベクトル")

    @field_validator("theta")
    @classmethod
    def _check_one_hot(cls, v: list[int]) -> list[int]:
        if any(t not in (0, 1) for t in v) or sum(v) != 1:
            raise ValueError("theta は要素がちょうど1つだけ1の二値ベクトルである必要があります")
        return v

    @classmethod
    def one_hot(cls, class_index: int, n_classes: int) -> "ClassEncoding":
        theta = [0] * n_classes
        theta[class_index] = 1
        return cls(theta=theta)

    def decode(self) -> int:
        return self.theta.index(1)


class FisherStats(BaseModel):
    """クラスごと・全体の特徴量統計（Fisherスコア用）"""
    per_class: list[StatsSummary] = Field(..., description="クラス m ごとの統計")
    overall: StatsSummary = Field(..., description="全体の統計")

    @classmethod
    def empty(cls, n_classes: int, dim: int) -> "FisherStats":
        return cls(
            per_class=[StatsSummary.empty(dim) for _ in range(n_classes)],
            overall=StatsSummary.empty(dim),
        )


class EvolvingClassifier(BaseModel):
    """一対他（One-vs-All）進化型ファジィ分類器"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_classes: int = Field(..., ge=1, description="クラス数 M")
    n_features: int = Field(..., ge=1, description="マスク前の特徴量数")
    config: EvolveConfig
    models: list[EvolvingModel] = Field(default_factory=list, description="クラスごとのモデル")
    encodings: list[ClassEncoding] = Field(default_factory=list)
    fisher: FisherStats
    kappa_f: float = Field(0.0, ge=0, description="Fisherスコアの相対閾値 κ_F")
    feature_mask: Optional[MaskArray] = Field(None, description="選択された特徴量（凍結後）")
    warmup: int = Field(50, ge=0, description="マスク凍結までのサンプル数 W")
    fixed_sigma2: Optional[FloatArray] = Field(None, description="統計交換で固定した全体分散")
    pending: list[tuple[np.ndarray, int]] = Field(default_factory=list, description="ウォームアップ中のサンプル")
    tick: int = Field(0, ge=0, description="全クラス共通のサンプル時刻")
    track_sigma2: bool = Field(True, description="Fisher統計の全体分散で σ² を更新し続けるか")

    @property
    def is_frozen(self) -> bool:
        return self.feature_mask is not None


# =====================================================================
# フェデレーション（転送形式）
# =====================================================================

SNAPSHOT_FORMAT_VERSION = 1


class ClusterRecord(BaseModel):
    """スナップショット内のクラスタ"""
    model_config = ConfigDict(extra="forbid")

    id: int
    mu: list[float]
    sigma_eff: list[list[float]]
    scatter: list[list[float]]
    n: int = Field(..., ge=1)
    last_activation: int = Field(..., ge=0)
    class_id: Optional[int] = Field(None, ge=0)


class PrototypeRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma2: list[float]
    n_r: float = Field(..., gt=0)


class ModelSnapshot(BaseModel):
    """所有者とサーバ間でやり取りされるモデルの転送形式"""
    model_config = ConfigDict(extra="forbid")

    format_version: int
    D: int = Field(..., ge=1, description="クラスタの次元")
    M: int = Field(..., ge=0, description="クラス数（純粋なクラスタリングでは0）")
    config: EvolveConfig
    proto: PrototypeRecord
    clusters: list[ClusterRecord]
    owner_id: str
    tick: int = Field(..., ge=0)
    feature_mask: Optional[list[bool]] = Field(None, description="分類器の特徴量マスク")
    kappa_f: Optional[float] = Field(None, ge=0)


class FederatedPartition(BaseModel):
    """所有者へのデータ分割"""
    shards: list[list[int]] = Field(..., description="所有者ごとのインデックス集合")
    seed: int
    mode: Literal["iid-random"] = "iid-random"


class RoundStats(BaseModel):
    """ラウンド0で交換される統計（生データを含まない）"""
    overall: StatsSummary
    per_class: Optional[list[StatsSummary]] = None


class RoundResult(BaseModel):
    """1ラウンドの結果"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    global_model: Union[EvolvingClassifier, EvolvingModel]
    owners: list[Union[EvolvingClassifier, EvolvingModel]]
    partition: FederatedPartition
    stats: RoundStats = Field(..., description="サーバで結合した統計")
    kept: MaskArray = Field(..., description="標準化で残した特徴量")
    standardized: bool = True
    snapshots: list[bytes] = Field(default_factory=list, description="所有者から送られたスナップショット")


# =====================================================================
# データセット・評価
# =====================================================================


class Dataset(BaseModel):
    """特徴量行列とラベル"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = Field("dataset", description="データセット名")
    X: FloatArray = Field(..., description="n×D の特徴量行列")
    y: Optional[np.ndarray] = Field(None, description="0..M-1 のラベル")
    feature_names: list[str] = Field(default_factory=list)
    class_names: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        if self.X.ndim != 2:
            raise ValueError("X は2次元行列である必要があります")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X に非有限値が含まれています")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=int)
            if self.y.shape != (self.X.shape[0],):
                raise ValueError("y の長さが X の行数と一致しません")
            if self.y.size and (self.y.min() < 0 or self.y.max() >= max(len(self.class_names), 1)):
                raise ValueError("ラベルが [0, M) の範囲外です")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


class RunManifest(BaseModel):
    """実行条件（出力ファイルに必ず埋め込む）"""
    subcommand: str
    dataset: str
    n_r: float
    kappa_m: float
    kappa_n: int
    kappa_v: float
    kappa_f: float = 0.0
    n_sigma: Optional[float] = None
    age_limit: Optional[int] = None
    age_percentile: float = 95.0
    age_staleness: float = 0.5
    server_age_limit: Optional[int] = None
    prior_weight: float = 1.0
    det_mode: str = DetMode.SQRT_DET.value
    owners: int = 3
    folds: int = 3
    repeats: int = 10
    seed: int = 0
    out: str = "out"


class FoldResult(BaseModel):
    """1フォールド分の評価結果"""
    repeat: int
    fold: int
    accuracy: float = Field(..., ge=0, le=1)
    macro_f1: float = Field(..., ge=0, le=1)
    roc_auc_ovr_macro: Optional[float] = Field(None, ge=0, le=1, description="評価できるクラスがなければ None")
    train_time_per_sample_ms: float = Field(..., ge=0)
    n_clusters_global: int = Field(..., ge=0)


class MetricSummary(BaseModel):
    """平均 ± 標準偏差"""
    mean: Optional[float] = Field(None, description="有効な値がなければ None")
    std: float = Field(0.0, ge=0)


class EvalReport(BaseModel):
    """分類ベンチマークの評価レポート"""
    manifest: RunManifest
    accuracy: MetricSummary
    macro_f1: MetricSummary
    roc_auc_ovr_macro: MetricSummary
    train_time_per_sample_ms: MetricSummary
    n_clusters_global: MetricSummary
    folds: list[FoldResult] = Field(default_factory=list)


class DatasetEntry(BaseModel):
    """データセットカタログの1項目"""
    name: str = Field(..., description="CLI で指定する名前")
    title: str = Field(..., description="表示名")
    task: Literal["clustering", "classification"]
    source: Literal["sklearn", "file", "synthetic"]
    filename: Optional[str] = Field(None, description="データディレクトリ内のファイル名")
    url: Optional[str] = Field(None, description="入手元")
    has_header: bool = False
    delimiter: Optional[str] = Field(",", description="区切り文字（None は空白区切り）")
    label_column: Optional[int] = Field(None, description="ラベル列の位置（負数は末尾から）")
    binarize_label: bool = Field(False, description="0 とそれ以外の2クラスにまとめる")
    tuned_n_r: float = Field(..., gt=0, description="暫定の N_r（tuned_nr.json があればそちらを優先）")
    kappa_n: int = Field(1, ge=1, description="推奨する κ_n")
    checksum: Optional[str] = Field(None, description="ファイルの sha256（設定時は読み込みで検証）")


class ClusterSummary(BaseModel):
    """クラスタリング結果の1クラスタ（元の特徴量の単位）"""
    id: int
    n: int
    mu: list[float]
    sigma_eff: list[list[float]]


class ClusteringSummary(BaseModel):
    """cluster / federate サブコマンドの要約"""
    manifest: RunManifest
    n_clusters: int
    total_n: int
    ari: Optional[float] = Field(None, description="正解ラベルがある場合の調整ランド指数")
    clusters: list[ClusterSummary] = Field(default_factory=list)
