"""
実行環境の設定

.env と環境変数から設定を読み込みます。CLI のフラグが優先されます。
"""

import logging
import os
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# 環境変数を読み込み
load_dotenv()

PROJECT_ROOT = Path(__file__).parent.parent


class Settings(BaseModel):
    """環境由来の設定"""
    log_level: str = Field("INFO", description="ログレベル")
    workers: int = Field(1, ge=1, description="ワーカースレッド数（1 で逐次実行）")
    data_dir: Path = Field(PROJECT_ROOT / "data" / "raw", description="データセットの配置先")
    out_dir: Path = Field(Path("out"), description="出力先ディレクトリ")
    parallel_pairs: int = Field(16, ge=1, description="重なり評価を並列化する最小ペア数")


def _int_env(name: str, default: int) -> int:
    value = os.getenv(name)
    if not value:
        return default
    try:
        return int(value)
    except ValueError:
        logging.getLogger(__name__).warning("%s=%r は整数ではないため既定値 %d を使います", name, value, default)
        return default


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    環境変数から設定を取得

    Returns:
        Settings: FEDEVO_* 環境変数を反映した設定
    """
    data_dir = os.getenv("FEDEVO_DATA_DIR")
    out_dir = os.getenv("FEDEVO_OUT_DIR")
    return Settings(
        log_level=os.getenv("FEDEVO_LOG_LEVEL", "INFO").upper(),
        workers=max(1, _int_env("FEDEVO_WORKERS", 1)),
        data_dir=Path(data_dir) if data_dir else PROJECT_ROOT / "data" / "raw",
        out_dir=Path(out_dir) if out_dir else Path("out"),
        parallel_pairs=max(1, _int_env("FEDEVO_PARALLEL_PAIRS", 16)),
    )
