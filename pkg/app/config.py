"""应用配置模块，使用 Pydantic Settings 管理环境变量，并负责读取扁平键值配置文件。"""

import json
from pathlib import Path

from dotenv import dotenv_values
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigError


class Settings(BaseSettings):
    """全局运行配置，从 .env 文件或 REVSUM_* 环境变量读取。"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="REVSUM_",
        case_sensitive=False,
        extra="ignore",
    )

    # 运行时数据根目录（检查点、历史记录默认写到这里）
    data_dir: str = "data"
    log_level: str = "INFO"

    # 全局默认随机种子
    seed: int = 13

    # 评估时并行前向的线程数（1 表示串行）
    eval_workers: int = 1

    # 截断长度：评论 400 词、摘要 30 词
    max_review_len: int = 400
    max_summary_len: int = 30

    # 词表频次下限
    min_freq: int = 2

    # 有限差分步长：算子级 / 整模型抽查
    gradcheck_step: float = 1e-6
    model_gradcheck_step: float = 1e-4

    # 热力图高亮阈值（重标定到 [0,100] 之后）
    heatmap_threshold: float = 50.0

    @property
    def data_path(self) -> Path:
        """返回数据根目录的 Path 对象。"""
        return Path(self.data_dir)

    @property
    def runs_path(self) -> Path:
        """返回训练运行目录路径。"""
        return self.data_path / "runs"


def load_config_file(path: Path) -> dict[str, str]:
    """
    读取扁平键值配置文件。

    .json 后缀按扁平 JSON 对象解析，其余按 `key=value` 行格式（python-dotenv）解析。

    参数：
        path: 配置文件路径

    返回：
        键到值的字典，值交给 pydantic 做类型转换
    """
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件不是合法 JSON: {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"配置文件必须是 JSON 对象: {path}")
        return raw
    values = dotenv_values(path)
    return {key: value for key, value in values.items() if value is not None}


settings = Settings()
