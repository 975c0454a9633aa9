"""
レポートの保存

評価レポート・クラスタリング要約・実行条件・調整済み N_r 表を --out ディレクトリに書き出します。
機械可読の JSON には学習時間を含めず（ハードウェア依存のため）、timing.json に分けて保存します。
"""

import json
import logging
from pathlib import Path
from typing import Any, Optional

from models.data_models import ClusteringSummary, EvalReport, RunManifest
from ui.report_view import render_clustering, render_report

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"
REPORT_TEXT_FILE = "report.txt"
TIMING_FILE = "timing.json"
SUMMARY_FILE = "summary.json"
SUMMARY_TEXT_FILE = "summary.txt"
TUNED_FILE = "tuned_nr.json"

# 再現可能な出力から除く項目
_TIMING_FIELDS = {
    "train_time_per_sample_ms": True,
    "folds": {"__all__": {"train_time_per_sample_ms"}},
}


def dumps(payload: Any) -> str:
    """出力ファイル用の JSON（同じ内容なら同じバイト列になる）"""
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("書き出しました: %s", path)
    return path


def save_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    return _write(Path(out_dir) / MANIFEST_FILE, dumps(manifest.model_dump(mode="json")))


def save_eval_report(report: EvalReport, out_dir: Path) -> list[Path]:
    """
    評価レポートを保存する

    Returns:
        list[Path]: report.json, report.txt, timing.json, manifest.json
    """
    out_dir = Path(out_dir)
    timing = {
        "manifest": report.manifest.model_dump(mode="json"),
        "train_time_per_sample_ms": report.train_time_per_sample_ms.model_dump(mode="json"),
        "folds": [
            {"repeat": f.repeat, "fold": f.fold, "train_time_per_sample_ms": f.train_time_per_sample_ms}
            for f in report.folds
        ],
    }
    return [
        _write(out_dir / REPORT_FILE, dumps(report.model_dump(mode="json", exclude=_TIMING_FIELDS))),
        _write(out_dir / REPORT_TEXT_FILE, render_report(report)),
        _write(out_dir / TIMING_FILE, dumps(timing)),
        save_manifest(report.manifest, out_dir),
    ]


def load_eval_report(out_dir: Path) -> dict:
    """report.json を辞書として読み込む（学習時間なし）"""
    return json.loads((Path(out_dir) / REPORT_FILE).read_text(encoding="utf-8"))


def save_clustering_summary(summary: ClusteringSummary, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        _write(out_dir / SUMMARY_FILE, dumps(summary.model_dump(mode="json"))),
        _write(out_dir / SUMMARY_TEXT_FILE, render_clustering(summary)),
        save_manifest(summary.manifest, out_dir),
    ]


def save_tuned_table(
    dataset: str,
    best: float,
    table: dict[float, Optional[float]],
    manifest: RunManifest,
    out_dir: Path,
) -> Path:
    """
    調整済み N_r 表を保存する（既存の表があれば該当データセットだけ更新）
    """
    path = Path(out_dir) / TUNED_FILE
    payload: dict[str, Any] = {"note": "empirically tuned by grid search (tune subcommand)", "n_r": {}, "grid": {}}
    if path.is_file():
        try:
            payload.update(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError:
            logger.warning("%s が壊れているため作り直します", path)
    payload["n_r"][dataset] = best
    payload["grid"][dataset] = {f"{k:g}": v for k, v in sorted(table.items())}
    payload.setdefault("manifests", {})[dataset] = manifest.model_dump(mode="json")
    return _write(path, dumps(payload))
