"""
テスト共通のフィクスチャ
"""

from typing import Optional

import numpy as np
import pytest

from data.datasets import make_blobs
from models.data_models import Dataset, EvolveConfig, EvolvingModel, GaussianCluster, PrototypeSpec


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def make_cluster():
    """散布行列を省略すると n=1 の誕生直後のクラスタ"""

    def factory(
        cluster_id: int,
        mu,
        n: int = 1,
        scatter: Optional[np.ndarray] = None,
        last_activation: int = 0,
        class_id: Optional[int] = None,
    ) -> GaussianCluster:
        mu = np.asarray(mu, dtype=float)
        return GaussianCluster(
            id=cluster_id,
            mu=mu,
            scatter=np.zeros((mu.size, mu.size)) if scatter is None else scatter,
            n=n,
            last_activation=last_activation,
            class_id=class_id,
        )

    return factory


@pytest.fixture
def unit_model():
    """σ²=1, N_r=1 の固定プロトタイプ（n=1 のクラスタの実効共分散が単位行列）"""

    def factory(clusters: list[GaussianCluster], tick: int = 0, **config) -> EvolvingModel:
        dim = clusters[0].dim if clusters else 2
        config.setdefault("n_r", 1.0)
        return EvolvingModel(
            clusters=clusters,
            proto=PrototypeSpec(sigma2=np.ones(dim), n_r=config["n_r"]),
            config=EvolveConfig(**config),
            tick=tick,
            next_id=max((c.id for c in clusters), default=-1) + 1,
            sigma2_fixed=True,
        )

    return factory


@pytest.fixture
def blobs() -> Dataset:
    """(0,0), (3,3), (6,0) を中心とする σ=0.05 の塊、各200点"""
    return make_blobs(n_per_blob=200, std=0.05, seed=7)


@pytest.fixture
def two_class_data(rng) -> tuple[np.ndarray, np.ndarray]:
    """よく分離した2クラス（各100点）、行はシャッフル済み"""
    a = rng.normal([0.0, 0.0], 0.3, size=(100, 2))
    b = rng.normal([5.0, 5.0], 0.3, size=(100, 2))
    X = np.vstack([a, b])
    y = np.array([0] * 100 + [1] * 100)
    order = rng.permutation(200)
    return X[order], y[order]
