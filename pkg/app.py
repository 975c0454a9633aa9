"""
フェデレーテッド進化型クラスタリング CLI

サブコマンド:
    cluster   2D データのフェデレーテッドクラスタリングと 2σ 楕円の SVG
    classify  K 分割 × 繰り返しの分類ベンチマーク
    federate  所有者スナップショットの書き出しとサーバ集約（ファイルドロップ）
    tune      N_r のグリッド探索
    datasets  カタログの一覧と同梱データの CSV 書き出し

終了コード: 0 成功 / 1 実行時エラー / 2 使い方・入力の誤り
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score

from data.catalog import entries, get_entry
from data.datasets import load_dataset, materialize, pin_checksums, tuned_n_r
from database.report_store import (
    save_clustering_summary,
    save_eval_report,
    save_manifest,
    save_tuned_table,
)
from database.snapshot_store import load_snapshot_files, save_snapshot, serialize
from logic.classifier import n_clusters
from logic.evaluation import DEFAULT_NR_GRID, evaluate, owner_config, server_config, tune_n_r
from logic.evolve import assign, total_count
from logic.federated import SERVER_ID, aggregate, run_round, transform
from logic.gaussian import effective_covariance
from logic.settings import get_settings
from models.data_models import (
    ClusteringSummary,
    ClusterSummary,
    Dataset,
    DetMode,
    EvolvingModel,
    ModelSnapshot,
    RoundResult,
    RunManifest,
)
from models.errors import AggregationError, DatasetError, FedEvoError
from ui.report_view import render_clustering, render_report
from ui.svg_plot import render_clusters_svg

logger = logging.getLogger("fedevo")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """引数や入力ファイルの誤り（終了コード2）"""


def _add_model_flags(parser: argparse.ArgumentParser, data_required: bool = True) -> None:
    parser.add_argument("--data", required=data_required, default=None, help="カタログ名または CSV のパス")
    parser.add_argument("--label-column", type=int, default=None, help="CSV のラベル列（負数は末尾から）")
    parser.add_argument("--nr", type=float, default=None, help="量子化数 N_r（省略時は調整済みの値）")
    parser.add_argument("--km", type=float, default=1.5, help="重なり条件の閾値 κ_m")
    parser.add_argument("--kn", type=int, default=None, help="最小サンプル数 κ_n（省略時はカタログの値）")
    parser.add_argument("--kv", type=float, default=10.0, help="統合後体積の上限（プロトタイプ体積の倍数）")
    parser.add_argument("--kf", type=float, default=0.0, help="Fisherスコアの相対閾値 κ_F")
    parser.add_argument("--nsigma", type=float, default=None, help="活性化閾値 N_σ（省略時は √D）")
    parser.add_argument("--age-limit", type=int, default=None, help="所有者での年齢削除の閾値")
    parser.add_argument("--server-age-limit", type=int, default=None, help="サーバでの年齢削除の下限（省略時は無効）")
    parser.add_argument("--age-percentile", type=float, default=95.0, help="サーバでの年齢削除のパーセンタイル")
    parser.add_argument(
        "--age-staleness", type=float, default=0.5,
        help="サーバで古いとみなす年齢の下限（大域ティックに対する割合）",
    )
    parser.add_argument("--prior-weight", type=float, default=1.0, help="プロトタイプ共分散の擬似カウント")
    parser.add_argument(
        "--det-mode", choices=[m.value for m in DetMode], default=DetMode.SQRT_DET.value,
        help="体積計算の行列式モード",
    )
    parser.add_argument("--owners", type=int, default=3, help="データ所有者の数")
    parser.add_argument("--seed", type=int, default=0, help="乱数シード")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, default=None, help="出力ディレクトリ")
    parser.add_argument("--workers", type=int, default=None, help="並列スレッド数")
    parser.add_argument("--log-level", default=None, help="ログレベル")
    parser.add_argument("--data-dir", type=Path, default=None, help="ファイル型データセットの配置先")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedevo", description="フェデレーテッド進化型ガウスクラスタリング")
    sub = parser.add_subparsers(dest="command", required=True)

    cluster = sub.add_parser("cluster", help="フェデレーテッドクラスタリングと SVG 描画")
    _add_model_flags(cluster)
    _add_common_flags(cluster)

    classify = sub.add_parser("classify", help="分類ベンチマーク")
    _add_model_flags(classify)
    classify.add_argument("--folds", type=int, default=3, help="交差検証の分割数")
    classify.add_argument("--repeats", type=int, default=10, help="繰り返し回数")
    _add_common_flags(classify)

    federate = sub.add_parser("federate", help="スナップショットの書き出しと集約")
    federate.add_argument("--classify", action="store_true", help="一対他分類器として学習する")
    federate.add_argument("--aggregate-only", action="store_true", help="既存のスナップショットだけを集約する")
    federate.add_argument("--snapshots", type=Path, default=None, help="スナップショットのディレクトリ")
    _add_model_flags(federate, data_required=False)
    _add_common_flags(federate)

    tune = sub.add_parser("tune", help="N_r のグリッド探索")
    _add_model_flags(tune)
    tune.add_argument("--folds", type=int, default=3, help="交差検証の分割数")
    tune.add_argument("--repeats", type=int, default=1, help="繰り返し回数")
    tune.add_argument("--grid", type=float, nargs="+", default=None, help="探索する N_r")
    _add_common_flags(tune)

    datasets = sub.add_parser("datasets", help="データセットの一覧と書き出し")
    datasets.add_argument("--materialize", nargs="*", default=None, help="CSV に書き出すデータセット")
    datasets.add_argument("--pin", action="store_true", help="配置済みファイルの sha256 を checksums.json に記録する")
    _add_common_flags(datasets)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    name = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _load(args: argparse.Namespace) -> Dataset:
    try:
        return load_dataset(args.data, args.data_dir, seed=args.seed, label_column=args.label_column)
    except DatasetError as e:
        raise UsageError(str(e)) from e


def _known_entry(name: str):
    try:
        return get_entry(name)
    except DatasetError:
        return None


def _manifest(args: argparse.Namespace, dataset_name: str, out: Path) -> RunManifest:
    entry = _known_entry(args.data) if args.data else None
    n_r = args.nr
    if n_r is None:
        if entry is None:
            raise UsageError("カタログにないデータセットでは --nr が必要です")
        n_r = tuned_n_r(entry.name, args.data_dir)
    kappa_n = args.kn if args.kn is not None else (entry.kappa_n if entry is not None else 1)
    return RunManifest(
        subcommand=args.command,
        dataset=dataset_name,
        n_r=n_r,
        kappa_m=args.km,
        kappa_n=kappa_n,
        kappa_v=args.kv,
        kappa_f=args.kf,
        n_sigma=args.nsigma,
        age_limit=args.age_limit,
        age_percentile=args.age_percentile,
        age_staleness=args.age_staleness,
        server_age_limit=args.server_age_limit,
        prior_weight=args.prior_weight,
        det_mode=args.det_mode,
        owners=args.owners,
        folds=getattr(args, "folds", 3),
        repeats=getattr(args, "repeats", 1),
        seed=args.seed,
        out=str(out),
    )


def _cluster_summaries(result: RoundResult) -> list[ClusterSummary]:
    """大域モデルのクラスタを元の特徴量の単位に戻す"""
    model = result.global_model
    if isinstance(model, EvolvingModel):
        clusters = [(c, model) for c in model.clusters]
    else:
        clusters = [(c, m) for m in model.models for c in m.clusters]
    scale = np.ones(int(result.kept.sum()))
    shift = np.zeros_like(scale)
    if result.standardized:
        scale = np.sqrt(result.stats.overall.variance()[result.kept])
        shift = result.stats.overall.mean[result.kept]
    summaries = []
    for c, owner in clusters:
        sigma = effective_covariance(c, owner.proto, owner.config.prior_weight)
        summaries.append(ClusterSummary(
            id=c.id,
            n=c.n,
            mu=(shift + scale * c.mu).tolist(),
            sigma_eff=(sigma * np.outer(scale, scale)).tolist(),
        ))
    return summaries


def cmd_cluster(args: argparse.Namespace) -> int:
    """フェデレーテッドクラスタリングを1ラウンド実行し、要約と SVG を書き出す"""
    dataset = _load(args)
    out = args.out or get_settings().out_dir
    manifest = _manifest(args, dataset.name, out)

    result = run_round(
        dataset,
        n_owners=manifest.owners,
        seed=manifest.seed,
        owner_config=owner_config(manifest),
        server_config=server_config(manifest),
        workers=args.workers,
    )
    model = result.global_model
    X_model = transform(result, dataset.X)
    ari = None
    if dataset.y is not None and model.clusters:
        ari = float(adjusted_rand_score(dataset.y, assign(model, X_model)))

    summary = ClusteringSummary(
        manifest=manifest,
        n_clusters=model.n_clusters,
        total_n=total_count(model),
        ari=ari,
        clusters=_cluster_summaries(result),
    )
    save_clustering_summary(summary, out)

    if dataset.n_features == 2 and int(result.kept.sum()) == 2:
        labels = assign(model, X_model) if model.clusters else None
        positions = {c.id: k for k, c in enumerate(model.clusters)}
        svg = render_clusters_svg(
            dataset.X,
            [np.array(c.mu) for c in summary.clusters],
            [np.array(c.sigma_eff) for c in summary.clusters],
            assignment=None if labels is None else np.array([positions[i] for i in labels]),
            title=f"{dataset.name}: {summary.n_clusters} clusters",
            description=json.dumps(manifest.model_dump(mode="json"), ensure_ascii=False),
        )
        path = Path(out) / f"{dataset.name}.svg"
        path.write_text(svg, encoding="utf-8")
        logger.info("SVG を書き出しました: %s", path)
    else:
        logger.info("2次元ではないため SVG は描画しません (D=%d)", dataset.n_features)

    print(render_clustering(summary), end="")
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    """K 分割 × 繰り返しの分類ベンチマーク"""
    dataset = _load(args)
    if dataset.y is None:
        raise DatasetError(f"ラベルのないデータセットでは分類できません: {dataset.name}")
    out = args.out or get_settings().out_dir
    manifest = _manifest(args, dataset.name, out)
    report = evaluate(dataset, manifest, workers=args.workers)
    save_eval_report(report, out)
    print(render_report(report, include_timing=True), end="")
    return EXIT_OK


def _snapshot_manifest(args: argparse.Namespace, snapshots: list[ModelSnapshot], out: Path) -> RunManifest:
    """所有者の設定はスナップショットから、サーバ側の年齢削除はフラグから取る"""
    first = snapshots[0]
    config = first.config
    return RunManifest(
        subcommand=args.command,
        dataset=args.data or Path(args.snapshots).name,
        n_r=config.n_r,
        kappa_m=config.kappa_m,
        kappa_n=config.kappa_n,
        kappa_v=config.kappa_v,
        kappa_f=first.kappa_f or 0.0,
        n_sigma=config.n_sigma,
        age_limit=config.age_limit,
        age_percentile=args.age_percentile,
        age_staleness=args.age_staleness,
        server_age_limit=args.server_age_limit,
        prior_weight=config.prior_weight,
        det_mode=DetMode(config.det_mode).value,
        owners=len(snapshots),
        folds=getattr(args, "folds", 3),
        repeats=getattr(args, "repeats", 1),
        seed=args.seed,
        out=str(out),
    )


def _aggregate_only(args: argparse.Namespace, out: Path) -> int:
    if args.snapshots is None:
        raise UsageError("--aggregate-only には --snapshots が必要です")
    try:
        files = load_snapshot_files(args.snapshots)
    except FedEvoError as e:
        raise UsageError(str(e)) from e
    snapshots = [snap for _, snap in files]
    manifest = _snapshot_manifest(args, snapshots, out)
    try:
        global_model = aggregate(snapshots, server_config(manifest), workers=args.workers)
    except AggregationError as e:
        names = [p.name for p, s in files if s.owner_id in e.sources]
        raise AggregationError(f"{e}\nファイル: {', '.join(names)}") from e
    path = save_snapshot(serialize(global_model, SERVER_ID), Path(out), "global")
    save_manifest(manifest, out)
    logger.info("大域モデル: %s", path)
    return EXIT_OK


def cmd_federate(args: argparse.Namespace) -> int:
    """所有者スナップショットと大域スナップショットを書き出す"""
    out = Path(args.out or get_settings().out_dir)
    if args.aggregate_only:
        return _aggregate_only(args, out)
    if args.data is None:
        raise UsageError("--data か --aggregate-only のどちらかが必要です")

    dataset = _load(args)
    manifest = _manifest(args, dataset.name, out)
    result = run_round(
        dataset,
        n_owners=manifest.owners,
        seed=manifest.seed,
        owner_config=owner_config(manifest),
        server_config=server_config(manifest),
        classify=args.classify,
        kappa_f=manifest.kappa_f,
        workers=args.workers,
    )
    snapshot_dir = args.snapshots or out / "snapshots"
    for i, data in enumerate(result.snapshots):
        save_snapshot(data, snapshot_dir, f"owner-{i}")
    save_snapshot(serialize(result.global_model, SERVER_ID), out, "global")
    save_manifest(manifest, out)
    print(f"所有者 {len(result.snapshots)} 件、大域クラスタ {_count_clusters(result.global_model)} 個")
    return EXIT_OK


def _count_clusters(model) -> int:
    if isinstance(model, EvolvingModel):
        return model.n_clusters
    return n_clusters(model)


def cmd_tune(args: argparse.Namespace) -> int:
    """交差検証で N_r を探索し、tuned_nr.json を書き出す"""
    dataset = _load(args)
    if dataset.y is None:
        raise DatasetError(f"ラベルのないデータセットでは調整できません: {dataset.name}")
    out = args.out or get_settings().out_dir
    if args.nr is None:
        args.nr = 1.0
    manifest = _manifest(args, dataset.name, out)
    grid = tuple(args.grid) if args.grid else DEFAULT_NR_GRID
    best, table = tune_n_r(dataset, manifest, grid, workers=args.workers)
    save_tuned_table(dataset.name, best, table, manifest, out)
    for n_r, acc in sorted(table.items()):
        print(f"N_r={n_r:g}\t{'-' if acc is None else f'{acc * 100:.2f}'}")
    print(f"最良の N_r: {best:g}")
    return EXIT_OK


def cmd_datasets(args: argparse.Namespace) -> int:
    """カタログを表示し、指定があれば CSV に書き出して sha256 を表示する"""
    if args.pin:
        try:
            table = pin_checksums(args.data_dir)
        except DatasetError as e:
            raise UsageError(str(e)) from e
        for name, checksum in sorted(table.items()):
            print(f"{checksum}  {name}")
        return EXIT_OK
    if args.materialize is None:
        for entry in entries():
            where = entry.source if entry.source != "file" else f"file: {entry.filename}"
            print(f"{entry.name}\t{entry.task}\t{where}\tN_r={entry.tuned_n_r:g}")
        return EXIT_OK
    out = Path(args.out or get_settings().out_dir) / "datasets"
    names = args.materialize or [e.name for e in entries() if e.source != "file"]
    for name in names:
        try:
            path, checksum = materialize(name, out, args.data_dir)
        except DatasetError as e:
            raise UsageError(str(e)) from e
        print(f"{checksum}  {path}")
    return EXIT_OK


COMMANDS = {
    "cluster": cmd_cluster,
    "classify": cmd_classify,
    "federate": cmd_federate,
    "tune": cmd_tune,
    "datasets": cmd_datasets,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI のエントリポイント"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    _configure_logging(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except FedEvoError as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
