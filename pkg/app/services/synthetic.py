"""合成语料生成：按评分类别在评论和/或摘要中植入情感词，用于小规模复现互补性分析。"""

from enum import Enum
from typing import NamedTuple

import numpy as np
from loguru import logger

from app.errors import ConfigError
from app.schemas.data import SyntheticSpec
from app.services.corpus import Example


class SignalSide(str, Enum):
    """金标情感信号所在的一侧。"""

    BOTH = "both"
    REVIEW = "review"
    SUMMARY = "summary"


class SyntheticExample(NamedTuple):
    example: Example
    side: SignalSide


def _check_lexicon(spec: SyntheticSpec) -> None:
    for rating in range(1, 6):
        if not spec.lexicon.get(rating):
            raise ConfigError(f"类别 {rating} 的情感词表为空")
    if not spec.neutral:
        raise ConfigError("中性填充词表为空")


def _make_text(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    length: int,
    rating: int,
    signal_tokens: int,
    planted: bool,
) -> tuple[str, ...]:
    """生成一段文本：中性填充 + 可选的金标情感词 + 少量其他类别的噪声词。"""
    tokens = [spec.neutral[i] for i in rng.integers(0, len(spec.neutral), size=length)]
    others = [r for r in range(1, 6) if r != rating]
    for position in range(length):
        if rng.random() < spec.noise_rate:
            noise_class = others[rng.integers(0, len(others))]
            words = spec.lexicon[noise_class]
            tokens[position] = words[rng.integers(0, len(words))]
    if planted:
        words = spec.lexicon[rating]
        positions = rng.choice(length, size=signal_tokens, replace=False)
        for position in positions:
            tokens[int(position)] = words[rng.integers(0, len(words))]
    return tuple(tokens)


def gen_synthetic_with_sides(spec: SyntheticSpec, count: int) -> list[SyntheticExample]:
    """
    生成 count 条样本，同时返回每条样本的信号植入侧。

    以概率 ρ 只在评论或摘要之一（等概率）植入信号，否则两侧都植入。
    全过程只用 spec.seed 派生的一个随机源。
    """
    _check_lexicon(spec)
    if count < 0:
        raise ConfigError(f"样本数不能为负: {count}")
    rng = np.random.default_rng(spec.seed)
    priors = np.asarray(spec.class_priors, dtype=np.float64)
    out: list[SyntheticExample] = []
    for _ in range(count):
        rating = int(rng.choice(5, p=priors)) + 1
        if rng.random() < spec.conflict_rate:
            side = SignalSide.REVIEW if rng.random() < 0.5 else SignalSide.SUMMARY
        else:
            side = SignalSide.BOTH
        review_len = int(rng.integers(spec.review_length[0], spec.review_length[1] + 1))
        summary_len = int(rng.integers(spec.summary_length[0], spec.summary_length[1] + 1))
        review = _make_text(rng, spec, review_len, rating, spec.review_signal_tokens, side is not SignalSide.SUMMARY)
        summary = _make_text(rng, spec, summary_len, rating, spec.summary_signal_tokens, side is not SignalSide.REVIEW)
        out.append(SyntheticExample(Example(review, summary, rating), side))
    single = sum(1 for e in out if e.side is not SignalSide.BOTH)
    logger.info(f"合成语料生成完成 count={count} 单侧信号={single} seed={spec.seed}")
    return out


def gen_synthetic(spec: SyntheticSpec, count: int) -> list[Example]:
    """生成 count 条合成样本。"""
    return [item.example for item in gen_synthetic_with_sides(spec, count)]


def expected_conflict_fraction(spec: SyntheticSpec) -> float:
    """
    两个单文本模型的理想冲突比例：ρ·(1 − Σp²)。

    假设有信号的一侧总能判对，无信号一侧按类别先验猜测。
    """
    priors = np.asarray(spec.class_priors, dtype=np.float64)
    agree_by_chance = float(np.sum(priors ** 2))
    return spec.conflict_rate * (1.0 - agree_by_chance)
