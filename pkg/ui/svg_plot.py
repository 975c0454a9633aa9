"""
クラスタの SVG 描画

2D データの散布図と、各クラスタの 2σ 楕円を SVG 文字列として返します。
楕円の軸は実効共分散の固有分解から求め、半径は 2√固有値 です。
"""

import html
import math
from typing import Optional

import numpy as np

# 描画サイズ（px）
PLOT_SIZE = 640
MARGIN = 32

# クラスタの色
PALETTE = [
    "#667eea", "#f5576c", "#38ef7d", "#4facfe", "#764ba2",
    "#f093fb", "#11998e", "#fda085", "#00f2fe", "#a0aec0",
]


def ellipse_axes(sigma: np.ndarray, n_sigma: float = 2.0) -> tuple[float, float, float]:
    """
    共分散行列の nσ 楕円の (長半径, 短半径, 長軸の角度[rad])

    Args:
        sigma: 2×2 の正定値行列
        n_sigma: 何σの楕円か

    Returns:
        tuple[float, float, float]: 半径2つと x 軸からの角度
    """
    eigvals, eigvecs = np.linalg.eigh(np.asarray(sigma, dtype=float))
    major = eigvecs[:, 1]
    angle = math.atan2(float(major[1]), float(major[0]))
    return n_sigma * math.sqrt(max(eigvals[1], 0.0)), n_sigma * math.sqrt(max(eigvals[0], 0.0)), angle


class _Frame:
    """データ座標 → SVG 座標（縦横同じ縮尺、y は上向き）"""

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        span = float(max(np.max(upper - lower), 1e-12))
        self.scale = (PLOT_SIZE - 2 * MARGIN) / span
        self.lower = lower
        self.upper = upper

    def point(self, p: np.ndarray) -> tuple[float, float]:
        x = MARGIN + (p[0] - self.lower[0]) * self.scale
        y = PLOT_SIZE - MARGIN - (p[1] - self.lower[1]) * self.scale
        return round(float(x), 3), round(float(y), 3)


def _point_markup(x: float, y: float, color: str) -> str:
    return f'<circle class="point" cx="{x}" cy="{y}" r="1.8" fill="{color}" fill-opacity="0.6"/>'


def _ellipse_markup(cx: float, cy: float, rx: float, ry: float, degrees: float, color: str, label: str) -> str:
    return f"""<ellipse class="cluster" cx="{cx}" cy="{cy}" rx="{rx}" ry="{ry}"
        transform="rotate({degrees} {cx} {cy})"
        fill="none" stroke="{color}" stroke-width="2"><title>{html.escape(label)}</title></ellipse>"""


def render_clusters_svg(
    X: np.ndarray,
    centers: list[np.ndarray],
    covariances: list[np.ndarray],
    assignment: Optional[np.ndarray] = None,
    title: str = "",
    description: str = "",
) -> str:
    """
    散布図とクラスタの 2σ 楕円を描いた SVG を返す

    Args:
        X: n×2 のデータ
        centers: クラスタ中心
        covariances: クラスタの実効共分散（centers と同じ順）
        assignment: 各点のクラスタ番号（centers の添字、色分けに使う）
        title: 図のタイトル
        description: <desc> に埋め込む文字列（実行条件の JSON など）

    Returns:
        str: SVG 文書
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("SVG 描画は2次元データのみ対応しています")

    shapes = [ellipse_axes(s) for s in covariances]
    extents = [X.min(axis=0), X.max(axis=0)] if len(X) else [np.zeros(2), np.ones(2)]
    lower, upper = extents
    for mu, (rx, _, _) in zip(centers, shapes):
        lower = np.minimum(lower, np.asarray(mu) - rx)
        upper = np.maximum(upper, np.asarray(mu) + rx)
    frame = _Frame(lower, upper)

    points = []
    for i, p in enumerate(X):
        color = "#718096" if assignment is None else PALETTE[int(assignment[i]) % len(PALETTE)]
        points.append(_point_markup(*frame.point(p), color))

    ellipses = []
    for k, (mu, (rx, ry, angle)) in enumerate(zip(centers, shapes)):
        cx, cy = frame.point(np.asarray(mu))
        # y 軸が反転しているので回転も逆向き
        degrees = round(-math.degrees(angle), 3)
        ellipses.append(_ellipse_markup(
            cx, cy, round(rx * frame.scale, 3), round(ry * frame.scale, 3),
            degrees, PALETTE[k % len(PALETTE)], f"cluster {k}",
        ))

    return f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_SIZE}" height="{PLOT_SIZE}" viewBox="0 0 {PLOT_SIZE} {PLOT_SIZE}">
<title>{html.escape(title)}</title>
<desc>{html.escape(description)}</desc>
<rect width="100%" height="100%" fill="#ffffff"/>
<g id="points">
{chr(10).join(points)}
</g>
<g id="clusters">
{chr(10).join(ellipses)}
</g>
</svg>
"""
