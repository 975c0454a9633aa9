"""
進化型モデルのライフサイクル

サンプルごとの活性化判定・更新・クラスタ誕生、サイズ上限付きの反復統合、
サンプル数と年齢による削除を行います。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Iterable, Optional

import numpy as np

from logic.gaussian import (
    check_sample,
    cluster_mahalanobis_sq,
    incremental_update,
    log_volume,
    merge_pair,
    overlap_terms,
)
from logic.settings import get_settings
from logic.statistics import safe_variance, welford_update
from models.data_models import (
    DetMode,
    EvolveConfig,
    EvolvingModel,
    GaussianCluster,
    PrototypeSpec,
    StatsSummary,
)
from models.errors import DegenerateClusterError, MergeRefusedError, NoMatchError

logger = logging.getLogger(__name__)

Pair = tuple[int, int]


def new_model(
    dim: int,
    config: EvolveConfig,
    sigma2: Optional[np.ndarray] = None,
    class_id: Optional[int] = None,
) -> EvolvingModel:
    """
    空の進化型モデルを作成する

    Args:
        dim: 特徴量の次元 D
        config: 進化設定
        sigma2: 全体分散 σ²（指定時は固定、省略時は逐次推定）
        class_id: 一対他分類でのクラス

    Returns:
        EvolvingModel: クラスタを持たないモデル
    """
    fixed = sigma2 is not None
    return EvolvingModel(
        clusters=[],
        proto=PrototypeSpec(sigma2=sigma2 if fixed else np.ones(dim), n_r=config.n_r),
        config=config,
        sigma2_fixed=fixed,
        running=None if fixed else StatsSummary.empty(dim),
        class_id=class_id,
    )


def _activation_sq(m: EvolvingModel) -> float:
    return m.config.activation_sq(m.dim)


def _distance_sq(m: EvolvingModel, x: np.ndarray, c: GaussianCluster) -> float:
    return cluster_mahalanobis_sq(x, c, m.proto, m.config.prior_weight)


def _best(m: EvolvingModel, x: np.ndarray) -> tuple[GaussianCluster, float, float]:
    best: Optional[GaussianCluster] = None
    best_gamma = -1.0
    best_d2 = math.inf
    for c in m.clusters:
        d2 = _distance_sq(m, x, c)
        gamma = math.exp(-d2 / m.dim)
        if gamma > best_gamma or (gamma == best_gamma and best is not None and c.id < best.id):
            best, best_gamma, best_d2 = c, gamma, d2
    if best is None:
        raise NoMatchError("クラスタが1つもないモデルでは照合できません")
    return best, best_gamma, best_d2


def best_match(m: EvolvingModel, x: np.ndarray) -> tuple[int, float]:
    """
    最も帰属度の高いクラスタを返す（同値なら ID の小さい方）

    Args:
        m: モデル
        x: サンプル

    Returns:
        tuple[int, float]: (クラスタID, 帰属度 γ)
    """
    x = check_sample(x, m.dim)
    cluster, gamma, _ = _best(m, x)
    return cluster.id, gamma


def _update_sigma2(m: EvolvingModel, x: np.ndarray) -> None:
    if m.sigma2_fixed:
        return
    if m.running is None:
        m.running = StatsSummary.empty(m.dim)
    welford_update(m.running, x)
    m.proto.sigma2 = safe_variance(m.running)


def process_sample(m: EvolvingModel, x: np.ndarray, workers: Optional[int] = None) -> EvolvingModel:
    """
    1サンプルを処理する（活性化判定 → 更新または誕生 → 局所統合）

    d² ≥ N_σ² となるとき（γ ≤ exp(-N_σ²/D) と同値）新しいクラスタを生成し、
    それ以外は最も帰属度の高いクラスタを逐次更新します。

    Args:
        m: モデル（その場で変更される）
        x: サンプル
        workers: 重なり評価のワーカー数

    Returns:
        EvolvingModel: 更新後のモデル
    """
    x = check_sample(x, m.dim)
    m.tick += 1
    _update_sigma2(m, x)

    # 距離は1回だけ計算し、変化したクラスタの分だけ計算し直す
    distances = {c.id: _distance_sq(m, x, c) for c in m.clusters}
    best = min(m.clusters, key=lambda c: (distances[c.id], c.id), default=None)

    if best is None or distances[best.id] >= _activation_sq(m):
        best = GaussianCluster.born_at(m.allocate_id(), x, m.tick, m.class_id)
        m.clusters.append(best)
    else:
        incremental_update(best, x, m.tick)
    distances[best.id] = _distance_sq(m, x, best)

    pairs = _active_pairs(m, distances)
    if pairs:
        merge_step(m, pairs, focus=x, workers=workers)
    return m


def _active_pairs(m: EvolvingModel, distances: dict[int, float]) -> set[Pair]:
    threshold = _activation_sq(m)
    active = sorted((c for c in m.clusters if distances[c.id] < threshold), key=lambda c: c.id)
    return {(p.id, q.id) for p, q in combinations(active, 2) if p.class_id == q.class_id}


def _center_pair(m: EvolvingModel, p: GaussianCluster, q: GaussianCluster, threshold: float) -> bool:
    """一方の中心が他方で活性化するか（クラスの異なる対は False）"""
    if p.class_id != q.class_id:
        return False
    return _distance_sq(m, q.mu, p) < threshold or _distance_sq(m, p.mu, q) < threshold


def candidate_pairs(m: EvolvingModel, focus: Optional[np.ndarray] = None) -> set[Pair]:
    """
    統合候補のクラスタ対を列挙する

    focus 指定時（オンライン）: x で活性化したクラスタ同士のすべての対。
    focus 省略時（サーバ）: 一方の中心が他方で活性化する対。
    クラスの異なる対は含めません。

    Args:
        m: モデル
        focus: 現在のサンプル

    Returns:
        set[tuple[int, int]]: (小さいID, 大きいID) の集合
    """
    if len(m.clusters) < 2:
        return set()
    if focus is not None:
        return _active_pairs(m, {c.id: _distance_sq(m, focus, c) for c in m.clusters})

    threshold = _activation_sq(m)
    return {
        (p.id, q.id)
        for p, q in combinations(sorted(m.clusters, key=lambda c: c.id), 2)
        if _center_pair(m, p, q, threshold)
    }


def _refresh_pairs(
    m: EvolvingModel,
    pairs: set[Pair],
    merged: GaussianCluster,
    removed_id: int,
    focus: Optional[np.ndarray],
) -> set[Pair]:
    """統合後の候補対。変化したのは merged だけなので、それを含む対だけ作り直す"""
    if focus is not None:
        return candidate_pairs(m, focus)
    threshold = _activation_sq(m)
    kept = {pair for pair in pairs if merged.id not in pair and removed_id not in pair}
    for c in m.clusters:
        if c.id != merged.id and _center_pair(m, merged, c, threshold):
            kept.add((min(c.id, merged.id), max(c.id, merged.id)))
    return kept


def _terms_key(m: EvolvingModel) -> tuple:
    config = m.config
    return (m.proto.n_r, m.proto.sigma2.tobytes(), config.prior_weight, DetMode(config.det_mode))


def _evaluate_pairs(
    m: EvolvingModel,
    pairs: Iterable[Pair],
    workers: int,
) -> list[tuple[Pair, Optional[tuple[float, float]]]]:
    """
    各対の (対数重なり比, 統合後の対数体積) を評価。縮退した対とクラスの異なる対は None

    クラスタは ID ごとに n が単調に増えるので、(n_p, n_q) が同じ対は前回の値を再利用します。
    """
    by_id = {c.id: c for c in m.clusters}
    config = m.config
    cache = m._pair_cache
    base_key = _terms_key(m)

    def key_of(pair: Pair) -> tuple:
        return (by_id[pair[0]].n, by_id[pair[1]].n, base_key)

    def evaluate(pair: Pair) -> tuple[Pair, Optional[tuple[float, float]]]:
        p, q = by_id[pair[0]], by_id[pair[1]]
        try:
            return pair, overlap_terms(p, q, m.proto, config.det_mode, config.prior_weight)
        except (DegenerateClusterError, MergeRefusedError) as e:
            logger.debug("対 %s は評価できません: %s", pair, e)
            return pair, None

    ordered = sorted(pairs)
    missing = [pair for pair in ordered if pair not in cache or cache[pair][0] != key_of(pair)]
    if workers > 1 and len(missing) >= get_settings().parallel_pairs:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(evaluate, missing))
    else:
        fresh = [evaluate(pair) for pair in missing]
    for pair, terms in fresh:
        cache[pair] = (key_of(pair), terms)
    return [(pair, cache[pair][1]) for pair in ordered]


def _forget(m: EvolvingModel, cluster_ids: tuple[int, ...]) -> None:
    stale = [pair for pair in m._pair_cache if pair[0] in cluster_ids or pair[1] in cluster_ids]
    for pair in stale:
        del m._pair_cache[pair]


def merge_step(
    m: EvolvingModel,
    pairs: set[Pair],
    focus: Optional[np.ndarray] = None,
    workers: Optional[int] = None,
) -> EvolvingModel:
    """
    重なり条件とサイズ上限を満たす対を、比の小さい順に統合し続ける

    条件: V_pq/(V_p+V_q) < κ_m^D かつ V_pq ≤ κ_v・V_proto（いずれも対数で評価）。
    統合のたびに候補を更新し、条件を満たす対がなくなれば終了します。
    評価済みの対は再評価しません。

    Args:
        m: モデル（その場で変更される）
        pairs: 初期の候補対
        focus: 候補再計算に使うサンプル（None ならサーバ方式）
        workers: 重なり評価のワーカー数

    Returns:
        EvolvingModel: 統合後のモデル
    """
    if workers is None:
        workers = get_settings().workers
    config = m.config
    log_kappa = m.dim * math.log(config.kappa_m)
    log_cap = math.log(config.kappa_v) + log_volume(m.proto.covariance(), m.dim, config.det_mode)

    merges = 0
    while pairs:
        qualifying = [
            (terms[0], pair)
            for pair, terms in _evaluate_pairs(m, pairs, workers)
            if terms is not None and terms[0] < log_kappa and terms[1] <= log_cap
        ]
        if not qualifying:
            break
        log_ratio, (p_id, q_id) = min(qualifying)
        positions = {c.id: i for i, c in enumerate(m.clusters)}
        p, q = m.clusters[positions[p_id]], m.clusters[positions[q_id]]
        merged = merge_pair(p, q, m.proto, config.prior_weight, new_id=p_id)
        m.clusters[positions[p_id]] = merged
        del m.clusters[positions[q_id]]
        _forget(m, (p_id, q_id))
        merges += 1
        logger.debug("クラスタ %d と %d を統合 (ln比=%.4f, n=%d)", p_id, q_id, log_ratio, merged.n)
        pairs = _refresh_pairs(m, pairs, merged, q_id, focus)
    if merges and focus is None:
        logger.info("%d 回の統合を実行しました（残り %d クラスタ）", merges, len(m.clusters))
    return m


def _age_threshold(m: EvolvingModel, ages: np.ndarray, server: bool) -> Optional[float]:
    """年齢削除の閾値（None なら年齢では削除しない）"""
    config = m.config
    floor = None if config.age_limit is None else float(config.age_limit)
    if not server:
        return floor
    # サーバでは最も古い側の数パーセントを削除する。全体が新しいラウンドでは何も消さない
    threshold = max(float(np.percentile(ages, config.age_percentile)), config.age_staleness * m.tick)
    return threshold if floor is None else max(threshold, floor)


def prune(m: EvolvingModel, server: bool = False) -> EvolvingModel:
    """
    外れ値クラスタと古いクラスタを削除する

    n < κ_n のクラスタを削除し、所有者では age_limit が設定されていれば
    最後の活性化から age_limit を超えたクラスタも削除します。
    サーバ（server=True）では年齢が age_percentile パーセンタイルと
    age_staleness・tick の両方を超えるクラスタを削除し、age_limit は下限として働きます。
    各クラス（クラスを持たないモデルでは全体）の最後の1クラスタは削除しません。

    Args:
        m: モデル（その場で変更される）
        server: サーバ集約時の削除か

    Returns:
        EvolvingModel: 削除後のモデル
    """
    config = m.config
    if not m.clusters:
        return m

    ages = np.array([m.tick - c.last_activation for c in m.clusters])
    age_threshold = _age_threshold(m, ages, server)

    doomed: set[int] = set()
    for c, age in zip(m.clusters, ages):
        if c.n < config.kappa_n:
            doomed.add(c.id)
        elif age_threshold is not None and age > age_threshold:
            doomed.add(c.id)

    # クラスごとに最低1つは残す
    by_class: dict[Optional[int], list[GaussianCluster]] = {}
    for c in m.clusters:
        by_class.setdefault(c.class_id, []).append(c)
    for members in by_class.values():
        if all(c.id in doomed for c in members):
            keep = max(members, key=lambda c: (c.n, -c.id))
            doomed.discard(keep.id)

    if doomed:
        logger.info("%d 個のクラスタを削除しました（残り %d）", len(doomed), len(m.clusters) - len(doomed))
        _forget(m, tuple(doomed))
    m.clusters = [c for c in m.clusters if c.id not in doomed]
    return m


def fit_stream(m: EvolvingModel, X: np.ndarray, workers: Optional[int] = None) -> EvolvingModel:
    """
    行の順にサンプルを1パスで処理する（結果は行の順序に依存）

    Args:
        m: モデル
        X: n×D のサンプル行列

    Returns:
        EvolvingModel: 学習後のモデル
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return m
    for x in X:
        process_sample(m, x, workers=workers)
    return m


def assign(m: EvolvingModel, X: np.ndarray) -> np.ndarray:
    """各行の最良一致クラスタIDを返す"""
    X = np.asarray(X, dtype=float)
    return np.array([best_match(m, x)[0] for x in X], dtype=int)


def total_count(m: EvolvingModel) -> int:
    """全クラスタのサンプル数の合計"""
    return sum(c.n for c in m.clusters)
