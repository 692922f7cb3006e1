"""预测记录、训练历史与分析结果 Schema。"""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.variant import ModelVariant


class PredictionRecord(BaseModel):
    """单条预测：样本序号、金标评分、预测评分与模型标签。"""

    model_config = ConfigDict(populate_by_name=True)

    example_id: int = Field(alias="id")
    gold: int
    pred: int
    tag: str = Field(default="", alias="model")

    @field_validator("gold", "pred")
    @classmethod
    def validate_rating(cls, v: int) -> int:
        if not 1 <= v <= 5:
            raise ValueError(f"评分必须在 1-5 之间，实际 {v}")
        return v

    @property
    def correct(self) -> bool:
        return self.gold == self.pred

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


class EpochRecord(BaseModel):
    """训练历史中的一轮。"""

    epoch: int
    train_loss: float
    dev_accuracy: float
    improved: bool
    batch_losses: list[float] = Field(default_factory=list)


class SetAccuracy(BaseModel):
    """某个模型在各子集上的准确率；子集为空时为 None。"""

    model_config = ConfigDict(populate_by_name=True)

    tag: str = Field(alias="model")
    conflicting: Optional[float] = None
    non_conflicting: Optional[float] = None
    union: Optional[float] = None
    overall: float
    # 冲突集上的正确预测中落在并集内的比例
    union_share: Optional[float] = None


class SetDecomposition(BaseModel):
    """冲突集 / 非冲突集 / 并集划分，索引为样本在预测列表中的位置。"""

    total: int
    conflicting: list[int]
    non_conflicting: list[int]
    union: list[int]
    accuracies: list[SetAccuracy]
    # 冲突集上仅评论模型与仅摘要模型准确率之和
    stacked_accuracy: Optional[float] = None

    @property
    def conflicting_fraction(self) -> float:
        return len(self.conflicting) / self.total if self.total else 0.0

    def accuracy_of(self, tag: str) -> SetAccuracy:
        for acc in self.accuracies:
            if acc.tag == tag:
                return acc
        raise KeyError(tag)


class BucketAccuracy(BaseModel):
    """一个评论长度区间 [low, high) 上的准确率；high 为 None 表示无上界。"""

    low: int
    high: Optional[int]
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "count": self.count, "correct": self.correct, "accuracy": self.accuracy}


class VariantScore(BaseModel):
    """实验中一个变体在一个种子下的测试准确率。"""

    variant: ModelVariant
    seed: int
    accuracy: float


class ExperimentReport(BaseModel):
    """互补性实验汇总：各变体 × 种子的测试准确率，以及首个种子上的冲突集划分。"""

    conflict_rate: float
    expected_conflict_fraction: float
    scores: list[VariantScore]
    decomposition: SetDecomposition

    @property
    def conflicting_fraction(self) -> float:
        return self.decomposition.conflicting_fraction

    def variants(self) -> list[ModelVariant]:
        return list(dict.fromkeys(s.variant for s in self.scores))

    def mean_accuracy(self, variant: ModelVariant) -> float:
        """某变体在全部种子上的平均测试准确率。"""
        values = [s.accuracy for s in self.scores if s.variant is variant]
        if not values:
            raise KeyError(variant.value)
        return sum(values) / len(values)

    def best_joint(self) -> Optional[tuple[ModelVariant, float]]:
        """平均准确率最高的联合编码变体；实验里没有联合变体时为 None。"""
        joint = [v for v in self.variants() if not v.is_single_text and not v.is_separate]
        if not joint:
            return None
        best = max(joint, key=self.mean_accuracy)
        return best, self.mean_accuracy(best)

    def to_dict(self) -> dict:
        best = self.best_joint()
        return {
            "conflict_rate": self.conflict_rate,
            "expected_conflict_fraction": self.expected_conflict_fraction,
            "conflicting_fraction": self.conflicting_fraction,
            "mean_accuracy": {v.value: self.mean_accuracy(v) for v in self.variants()},
            "best_joint": best[0].value if best else None,
            "scores": [s.model_dump(mode="json") for s in self.scores],
            "decomposition": self.decomposition.model_dump(by_alias=True),
        }
