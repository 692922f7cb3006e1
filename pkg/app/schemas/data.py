"""语料记录与合成语料配置 Schema。"""

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import load_config_file
from app.errors import ConfigError


class CorpusRecord(BaseModel):
    """语料文件中的一行：评论、摘要与 1-5 分评分。"""

    model_config = ConfigDict(extra="ignore")

    review: str
    summary: str
    rating: int

    @field_validator("rating")
    @classmethod
    def validate_rating(cls, v: int) -> int:
        """评分必须在 1-5 之间。"""
        if not 1 <= v <= 5:
            raise ValueError(f"评分必须在 1-5 之间，实际 {v}")
        return v


# 每个评分类别的情感词
DEFAULT_LEXICON: dict[int, list[str]] = {
    1: ["terrible", "awful", "broken", "worst", "useless", "junk"],
    2: ["disappointing", "flimsy", "mediocre", "overpriced", "meh", "lacking"],
    3: ["okay", "average", "decent", "fine", "acceptable", "middling"],
    4: ["good", "solid", "nice", "pleased", "sturdy", "recommend"],
    5: ["excellent", "perfect", "amazing", "love", "fantastic", "superb"],
}

# 不携带情感的填充词
DEFAULT_NEUTRAL: list[str] = [
    "the", "a", "this", "it", "product", "box", "item", "i", "we", "was",
    "is", "for", "with", "my", "son", "daughter", "arrived", "bought", "color",
    "size", "time", "after", "use", "week", "day", "and", "to", "of", "on", "game",
]


class SyntheticSpec(BaseModel):
    """
    合成语料生成配置。

    conflict_rate ρ：以该概率只在评论或摘要之一（等概率）中植入金标类别的情感词，
    否则两侧都植入。noise_rate：每个填充位置被替换成其他类别情感词的概率。
    """

    model_config = ConfigDict(extra="forbid")

    lexicon: dict[int, list[str]] = Field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_LEXICON.items()})
    neutral: list[str] = Field(default_factory=lambda: list(DEFAULT_NEUTRAL))
    review_length: tuple[int, int] = (20, 60)
    summary_length: tuple[int, int] = (3, 6)
    conflict_rate: float = 0.3
    noise_rate: float = 0.05
    review_signal_tokens: int = 3
    summary_signal_tokens: int = 1
    class_priors: list[float] = Field(default_factory=lambda: [0.2] * 5)
    seed: int = 13

    @field_validator("conflict_rate", "noise_rate")
    @classmethod
    def validate_rate(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("比例必须在 [0, 1] 之间")
        return v

    @field_validator("review_length", "summary_length")
    @classmethod
    def validate_range(cls, v: tuple[int, int]) -> tuple[int, int]:
        low, high = v
        if low < 1 or high < low:
            raise ValueError(f"长度区间非法: {v}")
        return v

    @field_validator("class_priors")
    @classmethod
    def validate_priors(cls, v: list[float]) -> list[float]:
        if len(v) != 5 or any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("class_priors 必须是 5 个非负数且和为 1")
        return v

    @model_validator(mode="after")
    def validate_signal_fits(self) -> "SyntheticSpec":
        if self.review_signal_tokens < 1 or self.summary_signal_tokens < 1:
            raise ValueError("情感词植入个数必须 ≥ 1")
        if self.summary_signal_tokens > self.summary_length[0] or self.review_signal_tokens > self.review_length[0]:
            raise ValueError("植入的情感词个数不能超过最短文本长度")
        return self


def load_synthetic_spec(path: Path) -> SyntheticSpec:
    """
    读取合成语料配置。

    .json 文件可给出嵌套的 lexicon；`key=value` 文件只能覆盖标量项，区间写作 `20,60`。
    """
    try:
        if path.suffix.lower() == ".json":
            if not path.exists():
                raise ConfigError(f"配置文件不存在: {path}")
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"配置文件不是合法 JSON: {path}: {e}") from e
            return SyntheticSpec.model_validate(payload)
        values: dict[str, object] = dict(load_config_file(path))
        for key in ("review_length", "summary_length", "class_priors"):
            if key in values:
                values[key] = [part.strip() for part in str(values[key]).split(",")]
        return SyntheticSpec.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"合成语料配置校验失败: {e}") from e
