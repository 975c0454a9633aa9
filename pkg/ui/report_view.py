"""
レポートのテキスト表示

評価レポートとクラスタリング要約を、人が読める表（pandas の文字列表）にします。
"""

from typing import Optional

import pandas as pd

from models.data_models import ClusteringSummary, EvalReport, MetricSummary, RunManifest


def format_metric(summary: MetricSummary, percent: bool = True, digits: int = 1) -> str:
    """平均 ± 標準偏差 の文字列（値がなければ "-"）"""
    if summary.mean is None:
        return "-"
    scale = 100.0 if percent else 1.0
    return f"{summary.mean * scale:.{digits}f} ± {summary.std * scale:.{digits}f}"


def report_table(report: EvalReport, include_timing: bool = False) -> pd.DataFrame:
    """評価レポートを 指標 × データセット の表にする"""
    rows = {
        "正解率 [%]": format_metric(report.accuracy),
        "F1 [%]": format_metric(report.macro_f1),
        "ROC AUC [%]": format_metric(report.roc_auc_ovr_macro),
        "クラスタ数": format_metric(report.n_clusters_global, percent=False),
    }
    if include_timing:
        rows["時間 / サンプル [ms]"] = format_metric(report.train_time_per_sample_ms, percent=False, digits=3)
    return pd.DataFrame({report.manifest.dataset: rows})


def _optional(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:g}"


def manifest_lines(m: RunManifest) -> list[str]:
    """実行条件の全項目をテキストの見出しにする"""
    return [
        f"データセット: {m.dataset}（{m.subcommand}）",
        f"N_r={m.n_r:g} κ_m={m.kappa_m:g} κ_n={m.kappa_n} κ_v={m.kappa_v:g} κ_F={m.kappa_f:g}",
        f"N_σ={_optional(m.n_sigma)} 事前重み={m.prior_weight:g} 行列式={m.det_mode}",
        f"年齢削除: 所有者={_optional(m.age_limit)} サーバ下限={_optional(m.server_age_limit)} "
        f"パーセンタイル={m.age_percentile:g} 割合={m.age_staleness:g}",
        f"所有者 {m.owners} / {m.folds} 分割 × {m.repeats} 回 / seed={m.seed}",
    ]


def render_report(report: EvalReport, include_timing: bool = False) -> str:
    """評価レポートのテキスト"""
    header = manifest_lines(report.manifest) + [""]
    return "\n".join(header) + report_table(report, include_timing).to_string() + "\n"


def render_clustering(summary: ClusteringSummary, limit: Optional[int] = 50) -> str:
    """クラスタリング要約のテキスト（中心と分散の対角成分）"""
    lines = manifest_lines(summary.manifest) + [
        f"クラスタ数: {summary.n_clusters}（サンプル数 {summary.total_n}）",
    ]
    if summary.ari is not None:
        lines.append(f"ARI: {summary.ari:.4f}")
    rows = [
        {
            "id": c.id,
            "n": c.n,
            "mu": " ".join(f"{v:.4g}" for v in c.mu),
            "diag(Σ)": " ".join(f"{c.sigma_eff[j][j]:.4g}" for j in range(len(c.mu))),
        }
        for c in summary.clusters[:limit]
    ]
    if rows:
        lines.extend(["", pd.DataFrame(rows).to_string(index=False)])
    return "\n".join(lines) + "\n"
