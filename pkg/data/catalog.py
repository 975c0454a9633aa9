"""
データセットカタログ

ベンチマークに使うデータセットの一覧です。
2D クラスタリング用の8種類と合成データ、UCI の分類用6種類を定義します。
tuned_n_r は手で決めた暫定値です。`app.py tune` で交差検証のグリッド探索を行うと
tuned_nr.json に書き出され、データディレクトリに置けばカタログの値より優先されます。
"""

from models.data_models import DatasetEntry
from models.errors import DatasetError

# 2D クラスタリングデータの入手元
SIPU_URL = "https://cs.uef.fi/sipu/datasets"
UCI_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases"

DATASETS: list[DatasetEntry] = [
    # ===== 2D クラスタリング =====
    DatasetEntry(
        name="blobs3",
        title="合成データ（3つのガウス塊）",
        task="clustering",
        source="synthetic",
        tuned_n_r=4.0,
        kappa_n=4,
    ),
    DatasetEntry(
        name="s1",
        title="S1",
        task="clustering",
        source="file",
        filename="s1.txt",
        url=f"{SIPU_URL}/s1.txt",
        delimiter=None,
        tuned_n_r=64.0,
        kappa_n=10,
    ),
    DatasetEntry(
        name="s2",
        title="S2",
        task="clustering",
        source="file",
        filename="s2.txt",
        url=f"{SIPU_URL}/s2.txt",
        delimiter=None,
        tuned_n_r=64.0,
        kappa_n=10,
    ),
    DatasetEntry(
        name="s4",
        title="S4",
        task="clustering",
        source="file",
        filename="s4.txt",
        url=f"{SIPU_URL}/s4.txt",
        delimiter=None,
        tuned_n_r=48.0,
        kappa_n=10,
    ),
    DatasetEntry(
        name="r15",
        title="R15",
        task="clustering",
        source="file",
        filename="R15.txt",
        url=f"{SIPU_URL}/R15.txt",
        delimiter=None,
        label_column=2,
        tuned_n_r=128.0,
        kappa_n=5,
    ),
    DatasetEntry(
        name="aggregation",
        title="Aggregation",
        task="clustering",
        source="file",
        filename="Aggregation.txt",
        url=f"{SIPU_URL}/Aggregation.txt",
        delimiter=None,
        label_column=2,
        tuned_n_r=16.0,
        kappa_n=5,
    ),
    DatasetEntry(
        name="flame",
        title="Flame",
        task="clustering",
        source="file",
        filename="flame.txt",
        url=f"{SIPU_URL}/flame.txt",
        delimiter=None,
        label_column=2,
        tuned_n_r=8.0,
        kappa_n=3,
    ),
    DatasetEntry(
        name="jain",
        title="Jain",
        task="clustering",
        source="file",
        filename="jain.txt",
        url=f"{SIPU_URL}/jain.txt",
        delimiter=None,
        label_column=2,
        tuned_n_r=8.0,
        kappa_n=3,
    ),
    DatasetEntry(
        name="spiral",
        title="Spiral",
        task="clustering",
        source="file",
        filename="spiral.txt",
        url=f"{SIPU_URL}/spiral.txt",
        delimiter=None,
        label_column=2,
        tuned_n_r=32.0,
        kappa_n=2,
    ),
    # ===== UCI 分類 =====
    DatasetEntry(
        name="iris",
        title="Iris",
        task="classification",
        source="sklearn",
        tuned_n_r=4.0,
    ),
    DatasetEntry(
        name="wine",
        title="Wine",
        task="classification",
        source="sklearn",
        tuned_n_r=4.0,
    ),
    DatasetEntry(
        name="breast_cancer",
        title="Breast cancer",
        task="classification",
        source="sklearn",
        tuned_n_r=4.0,
    ),
    DatasetEntry(
        name="digits",
        title="Digits",
        task="classification",
        source="sklearn",
        tuned_n_r=2.0,
    ),
    DatasetEntry(
        name="heart",
        title="Heart disease (Cleveland)",
        task="classification",
        source="file",
        filename="processed.cleveland.data",
        url=f"{UCI_URL}/heart-disease/processed.cleveland.data",
        label_column=-1,
        binarize_label=True,
        tuned_n_r=4.0,
    ),
    DatasetEntry(
        name="autism",
        title="Autism screening (adult)",
        task="classification",
        source="file",
        filename="autism.csv",
        url="https://archive.ics.uci.edu/dataset/426/autism+screening+adult",
        has_header=True,
        label_column=-1,
        tuned_n_r=4.0,
    ),
]

# 名前からの逆引き
_BY_NAME = {entry.name: entry for entry in DATASETS}


def get_entry(name: str) -> DatasetEntry:
    """名前（大文字小文字を区別しない）でカタログを引く"""
    entry = _BY_NAME.get(name.lower())
    if entry is None:
        known = ", ".join(sorted(_BY_NAME))
        raise DatasetError(f"未知のデータセットです: {name}（利用可能: {known}）")
    return entry


def entries(task: str | None = None) -> list[DatasetEntry]:
    """カタログの項目（task 指定時はその種類だけ）"""
    return [e for e in DATASETS if task is None or e.task == task]
