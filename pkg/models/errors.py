"""
例外定義

フェデレーテッド進化型クラスタリングの各層が送出する例外を定義します。
すべて FedEvoError を基底とし、CLI は終了コードへの変換にこれを利用します。
"""

from typing import Optional


class FedEvoError(Exception):
    """本パッケージの全例外の基底クラス"""


class DegenerateClusterError(FedEvoError):
    """共分散が未定義、または数値的に特異（Cholesky分解に失敗）"""

    def __init__(self, message: str, cluster_id: Optional[int] = None) -> None:
        super().__init__(message)
        self.cluster_id = cluster_id


class RejectedSampleError(FedEvoError):
    """非有限値や次元不一致のため取り込めないサンプル"""


class NoMatchError(FedEvoError):
    """クラスタが存在しないモデルへの照合"""


class MergeRefusedError(FedEvoError):
    """クラス不一致・次元不一致による統合拒否"""


class SnapshotError(FedEvoError):
    """スナップショットのバージョン不一致・スキーマ違反・非対称行列"""


class AggregationError(FedEvoError):
    """互換性のないスナップショットの集約"""

    def __init__(self, message: str, sources: Optional[list[str]] = None) -> None:
        self.sources = sources or []
        if self.sources:
            message = f"{message} (対象: {', '.join(self.sources)})"
        super().__init__(message)


class DatasetError(FedEvoError):
    """データセットの読み込み・前処理エラー"""


class PartitionError(FedEvoError):
    """データ分割の前提条件違反"""


class UntrainedClassifierError(FedEvoError):
    """学習前（クラスタを持たないクラスがある）分類器での予測"""


class UnknownClassError(FedEvoError):
    """範囲外のクラスインデックス"""
