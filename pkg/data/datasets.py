"""
データセットの読み込みと前処理

CSV の読み込み（カテゴリ列のワンホット化、欠損行の除外）、
全体統計による z-score 標準化、層化 K 分割、合成データの生成を提供します。
"""

import csv
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from sklearn import datasets as sk_datasets
from sklearn.model_selection import KFold, StratifiedKFold

from data.catalog import entries, get_entry
from logic.settings import get_settings
from logic.statistics import VARIANCE_FLOOR, local_stats
from models.data_models import Dataset, DatasetEntry, StatsSummary
from models.errors import DatasetError

logger = logging.getLogger(__name__)

# 欠損値として扱う表記
NA_VALUES = ["?", ""]

# 調整済み N_r の表（tune の出力）
TUNED_NR_FILE = "tuned_nr.json"

# 配置済みファイルの sha256 の表（datasets --pin の出力）
CHECKSUM_FILE = "checksums.json"

_SKLEARN_LOADERS = {
    "iris": sk_datasets.load_iris,
    "wine": sk_datasets.load_wine,
    "breast_cancer": sk_datasets.load_breast_cancer,
    "digits": sk_datasets.load_digits,
}


def _read_text(path: Path) -> str:
    if not path.is_file():
        raise DatasetError(f"データファイルが見つかりません: {path}")
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetError(f"データファイルを読めません: {path}: {e}") from e


def _check_rectangular(text: str, delimiter: Optional[str], path: Path) -> None:
    """全行の列数が等しいことを確認（pandas は列不足の行を黙って埋めるため）"""
    lines = [line for line in text.splitlines() if line.strip()]
    if delimiter is None:
        widths = [len(line.split()) for line in lines]
    else:
        widths = [len(row) for row in csv.reader(lines, delimiter=delimiter)]
    if not widths:
        raise DatasetError(f"データファイルが空です: {path}")
    for lineno, width in enumerate(widths, start=1):
        if width != widths[0]:
            raise DatasetError(f"{path.name} の {lineno} 行目の列数 {width} が {widths[0]} と一致しません")


def _encode_features(frame: pd.DataFrame) -> tuple[np.ndarray, list[str]]:
    """数値列はそのまま、それ以外は出現順のカテゴリでワンホット化"""
    blocks: list[pd.DataFrame] = []
    for column in frame.columns:
        series = frame[column]
        if pd.api.types.is_numeric_dtype(series):
            blocks.append(series.astype(float).to_frame(str(column)))
            continue
        values = series.astype(str).str.strip()
        categories = pd.Categorical(values, categories=pd.unique(values))
        dummies = pd.get_dummies(categories, prefix=str(column), prefix_sep="=", dtype=float)
        dummies.index = frame.index
        blocks.append(dummies)
    encoded = pd.concat(blocks, axis=1)
    return encoded.to_numpy(dtype=float), [str(c) for c in encoded.columns]


def load_csv(
    path: Path,
    has_header: bool = True,
    label_column: Optional[int | str] = None,
    delimiter: Optional[str] = ",",
    name: Optional[str] = None,
) -> Dataset:
    """
    CSV を読み込んで Dataset にする

    Args:
        path: ファイルパス
        has_header: 1行目が見出しか
        label_column: ラベル列（位置または見出し名、負の位置は末尾から）
        delimiter: 区切り文字（None は連続空白）
        name: データセット名（省略時はファイル名）

    Returns:
        Dataset: 欠損のある行を除いた特徴量とラベル
    """
    path = Path(path)
    text = _read_text(path)
    _check_rectangular(text, delimiter, path)
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            header=0 if has_header else None,
            sep=r"\s+" if delimiter is None else delimiter,
            na_values=NA_VALUES,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise DatasetError(f"CSV を解析できません: {path}: {e}") from e
    if not has_header:
        frame.columns = [f"x{i}" for i in range(frame.shape[1])]

    before = len(frame)
    frame = frame.dropna(axis=0, how="any").reset_index(drop=True)
    dropped = before - len(frame)
    if dropped:
        logger.warning("%s: 欠損値を含む %d 行を除外しました", path.name, dropped)
    if frame.empty:
        raise DatasetError(f"有効な行がありません: {path}")

    y = None
    class_names: list[str] = []
    if label_column is not None:
        if isinstance(label_column, str):
            if label_column not in frame.columns:
                raise DatasetError(f"ラベル列 {label_column} がありません: {path}")
            label_name = label_column
        else:
            try:
                label_name = frame.columns[label_column]
            except IndexError as e:
                raise DatasetError(f"ラベル列の位置 {label_column} が範囲外です: {path}") from e
        codes, uniques = pd.factorize(frame[label_name], sort=False)
        y = codes.astype(int)
        class_names = [str(u) for u in uniques]
        frame = frame.drop(columns=[label_name])
    if frame.shape[1] == 0:
        raise DatasetError(f"特徴量の列がありません: {path}")

    X, feature_names = _encode_features(frame)
    return Dataset(
        name=name or path.stem,
        X=X,
        y=y,
        feature_names=feature_names,
        class_names=class_names,
    )


def retained_features(stats: StatsSummary) -> np.ndarray:
    """
    分散が正の特徴量のマスク

    定数の特徴量は警告を出して除外します。すべて定数なら DatasetError。
    """
    var = stats.variance()
    kept = np.isfinite(var) & (var > VARIANCE_FLOOR)
    for j in np.flatnonzero(~kept):
        logger.warning("特徴量 %d は分散が0のため除外します", j)
    if not kept.any():
        raise DatasetError("すべての特徴量が定数です")
    return kept


def zscore(
    X: np.ndarray,
    stats: StatsSummary,
    kept: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    学習データの統計で (x - 平均) / 標準偏差 に変換する

    標準偏差は n-1 分母です。評価データにも学習データ側の stats を渡します。

    Args:
        X: n×D の行列
        stats: 学習データ（全所有者）の統計
        kept: 残す特徴量（省略時は retained_features で決める）

    Returns:
        tuple[np.ndarray, np.ndarray]: (変換後の行列, 残した特徴量のマスク)
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != stats.dim:
        raise DatasetError(f"X の列数が統計の次元 {stats.dim} と一致しません")
    if kept is None:
        kept = retained_features(stats)
    std = np.sqrt(stats.variance()[kept])
    return (X[:, kept] - stats.mean[kept]) / std, kept


def standardize(X: np.ndarray) -> np.ndarray:
    """X 自身の統計で標準化（単一ノードでの利用向け）"""
    transformed, _ = zscore(X, local_stats(X))
    return transformed


def kfold_split(
    n: int,
    k: int,
    seed: int,
    y: Optional[np.ndarray] = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    K 分割交差検証のインデックス

    ラベルがあれば層化し、K 件未満のクラスがあれば層化せずに分割します（警告あり）。

    Returns:
        list[tuple[np.ndarray, np.ndarray]]: K 個の (学習, 評価) インデックス
    """
    if k < 2:
        raise DatasetError(f"分割数は2以上である必要があります: {k}")
    if n < k:
        raise DatasetError(f"サンプル数 {n} が分割数 {k} より少ないです")
    placeholder = np.zeros(n)
    if y is not None:
        y = np.asarray(y, dtype=int)
        counts = np.bincount(y)
        if counts[counts > 0].min() >= k:
            folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
            return [(train, test) for train, test in folds.split(placeholder, y)]
        logger.warning("サンプル数が %d 未満のクラスがあるため層化せずに分割します", k)
    folds = KFold(n_splits=k, shuffle=True, random_state=seed)
    return [(train, test) for train, test in folds.split(placeholder)]


def make_blobs(
    n_per_blob: int = 200,
    centers: tuple[tuple[float, float], ...] = ((0.0, 0.0), (3.0, 3.0), (6.0, 0.0)),
    std: float = 0.05,
    seed: int = 0,
) -> Dataset:
    """よく分離した2Dガウス塊の合成データ（行はシャッフル済み）"""
    X, y = sk_datasets.make_blobs(
        n_samples=[n_per_blob] * len(centers),
        centers=np.array(centers),
        cluster_std=std,
        shuffle=True,
        random_state=seed,
    )
    return Dataset(
        name="blobs3",
        X=X,
        y=y,
        feature_names=["x0", "x1"],
        class_names=[str(i) for i in range(len(centers))],
    )


def _binarize(dataset: Dataset, entry: DatasetEntry) -> Dataset:
    """最後の列を 0 / それ以外 の2クラスラベルにする"""
    column = dataset.X[:, entry.label_column]
    keep = np.ones(dataset.n_features, dtype=bool)
    keep[entry.label_column] = False
    return Dataset(
        name=entry.name,
        X=dataset.X[:, keep],
        y=(column != 0).astype(int),
        feature_names=[f for f, k in zip(dataset.feature_names, keep) if k],
        class_names=["absent", "present"],
    )


def load_dataset(
    name: str,
    data_dir: Optional[Path] = None,
    seed: int = 0,
    label_column: Optional[int] = None,
) -> Dataset:
    """
    カタログ名またはファイルパスからデータセットを読み込む

    Args:
        name: カタログ名、または見出し付き CSV のパス
        data_dir: ファイル型データセットの配置先
        seed: 合成データのシード
        label_column: CSV のパスを渡したときのラベル列

    Returns:
        Dataset: 読み込んだデータセット
    """
    candidate = Path(name)
    if candidate.suffix and candidate.exists():
        return load_csv(candidate, has_header=True, label_column=label_column)

    entry = get_entry(name)
    if entry.source == "synthetic":
        return make_blobs(seed=seed)
    if entry.source == "sklearn":
        bunch = _SKLEARN_LOADERS[entry.name]()
        return Dataset(
            name=entry.name,
            X=bunch.data,
            y=bunch.target,
            feature_names=[str(f) for f in bunch.feature_names],
            class_names=[str(c) for c in bunch.target_names],
        )

    data_dir = Path(data_dir) if data_dir is not None else get_settings().data_dir
    path = data_dir / entry.filename
    if not path.is_file():
        raise DatasetError(f"{entry.title} のファイルがありません: {path}（入手元: {entry.url}）")
    verify_checksum(entry, path, data_dir)
    if entry.binarize_label:
        raw = load_csv(path, has_header=entry.has_header, delimiter=entry.delimiter, name=entry.name)
        return _binarize(raw, entry)
    dataset = load_csv(
        path,
        has_header=entry.has_header,
        label_column=entry.label_column,
        delimiter=entry.delimiter,
        name=entry.name,
    )
    return dataset


def tuned_n_r(name: str, data_dir: Optional[Path] = None) -> float:
    """tuned_nr.json があればその値、なければカタログの値"""
    data_dir = Path(data_dir) if data_dir is not None else get_settings().data_dir
    table_path = data_dir / TUNED_NR_FILE
    if table_path.is_file():
        try:
            table = json.loads(table_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            logger.warning("%s を読めないためカタログの値を使います: %s", table_path, e)
        else:
            entry = table.get("n_r", {}).get(name)
            if entry is not None:
                return float(entry)
    return get_entry(name).tuned_n_r


def dataset_checksum(path: Path) -> str:
    """ファイルの sha256"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def pinned_checksums(data_dir: Path) -> dict[str, str]:
    """checksums.json に記録された名前 → sha256（ファイルがなければ空）"""
    path = Path(data_dir) / CHECKSUM_FILE
    if not path.is_file():
        return {}
    try:
        table = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"{path} を読めません: {e}") from e
    return {str(name): str(digest) for name, digest in table.get("sha256", {}).items()}


def verify_checksum(entry: DatasetEntry, path: Path, data_dir: Path) -> str:
    """
    ファイルの sha256 をカタログまたは checksums.json の値と照合する

    どちらにも値がなければ照合せずに記録だけします。

    Returns:
        str: 実際の sha256
    """
    actual = dataset_checksum(path)
    expected = entry.checksum or pinned_checksums(data_dir).get(entry.name)
    if expected is None:
        logger.info("%s のチェックサムは未登録です (sha256=%s)", path.name, actual)
    elif actual != expected.lower():
        raise DatasetError(f"{path.name} のチェックサムが一致しません: {actual}（期待値: {expected}）")
    return actual


def pin_checksums(data_dir: Optional[Path] = None) -> dict[str, str]:
    """
    配置済みのファイル型データセットの sha256 と入手元を checksums.json に書き出す

    Returns:
        dict[str, str]: 名前 → sha256
    """
    data_dir = Path(data_dir) if data_dir is not None else get_settings().data_dir
    present = [e for e in entries() if e.source == "file" and (data_dir / e.filename).is_file()]
    if not present:
        raise DatasetError(f"ファイル型データセットが見つかりません: {data_dir}")
    table = {e.name: dataset_checksum(data_dir / e.filename) for e in present}
    payload = {
        "sha256": table,
        "files": {e.name: e.filename for e in present},
        "urls": {e.name: e.url for e in present},
    }
    path = data_dir / CHECKSUM_FILE
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("%d 件のチェックサムを記録しました: %s", len(table), path)
    return table


def materialize(name: str, out_dir: Path, data_dir: Optional[Path] = None) -> tuple[Path, str]:
    """
    データセットを見出し付き CSV（末尾列がラベル）に書き出す

    Returns:
        tuple[Path, str]: (書き出したパス, sha256)
    """
    dataset = load_dataset(name, data_dir)
    frame = pd.DataFrame(dataset.X, columns=dataset.feature_names or None)
    if dataset.y is not None:
        frame["label"] = [dataset.class_names[i] for i in dataset.y]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{dataset.name}.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    checksum = dataset_checksum(path)
    logger.info("%s を書き出しました (sha256=%s)", path, checksum)
    return path, checksum
