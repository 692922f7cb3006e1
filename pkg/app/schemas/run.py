"""模型与训练配置 Schema，以及扁平配置文件到二者的拆分。"""

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from app.config import load_config_file
from app.errors import ConfigError
from app.models.variant import ModelVariant

# 各领域数据集的 dropout 与注意力头数
PRESETS: dict[str, dict[str, object]] = {
    "toys": {"dropout": 0.5, "heads": 1},
    "sports": {"dropout": 0.2, "heads": 1},
    "movies": {"dropout": 0.0, "heads": 2},
}


class ModelConfig(BaseModel):
    """一个变体标签加上实例化它所需的超参数。"""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    variant: ModelVariant = ModelVariant.REVIEW_CENTRIC
    vocab_size: int = 2
    embedding_dim: int = 300
    hidden_size: int = 256
    heads: int = 1
    layers: int = 2
    dropout: float = 0.5
    num_classes: int = 5
    trainable_embeddings: bool = True
    # 结构化自注意力：跳数 r 与投影维度 d_a
    attention_hops: int = 4
    attention_dim: int = 128
    layer_norm_eps: float = 1e-5

    @field_validator("dropout")
    @classmethod
    def validate_dropout(cls, v: float) -> float:
        """dropout 比例必须在 [0, 1) 内。"""
        if not 0.0 <= v < 1.0:
            raise ValueError("dropout 比例必须在 [0, 1) 之间")
        return v

    @field_validator("layers", "heads", "hidden_size", "embedding_dim", "attention_hops", "attention_dim")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("必须 ≥ 1")
        return v

    @field_validator("num_classes")
    @classmethod
    def validate_classes(cls, v: int) -> int:
        if v != 5:
            raise ValueError("评分固定为 5 类")
        return v

    @property
    def width(self) -> int:
        """BiLSTM 输出宽度 D = 2·d_h。"""
        return 2 * self.hidden_size


class TrainConfig(BaseModel):
    """训练循环配置。"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = 30
    batch_size: int = 16
    seed: int = 13
    patience: int = 3
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # 硬注意力辅助损失权重 λ
    hard_attention_weight: float = 1.0
    clip_norm: Optional[float] = 5.0
    # dev 准确率达到该值即提前结束，None 表示只靠早停
    target_accuracy: Optional[float] = None
    loss_reduction: Literal["sum", "mean"] = "sum"
    eval_workers: int = 1

    @field_validator("batch_size", "patience", "epochs", "eval_workers")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("必须 ≥ 1")
        return v

    @field_validator("learning_rate")
    @classmethod
    def validate_learning_rate(cls, v: float) -> float:
        if v < 0:
            raise ValueError("学习率不能为负")
        return v

    @field_validator("target_accuracy")
    @classmethod
    def validate_target(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not 0.0 < v <= 1.0:
            raise ValueError("目标准确率必须在 (0, 1] 之间")
        return v


def parse_run_config(values: dict[str, object]) -> tuple[ModelConfig, TrainConfig]:
    """
    把扁平键值拆分成 ModelConfig 与 TrainConfig。

    preset 键先展开为对应领域的 dropout/heads，显式键再覆盖它。

    参数：
        values: 扁平键值（字符串值交给 pydantic 转换）

    返回：
        (模型配置, 训练配置)
    """
    values = dict(values)
    merged: dict[str, object] = {}
    preset = values.pop("preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"未知预设 {preset!r}，可选: {', '.join(PRESETS)}")
        merged.update(PRESETS[str(preset)])
    merged.update(values)

    model_keys = set(ModelConfig.model_fields)
    train_keys = set(TrainConfig.model_fields)
    unknown = sorted(set(merged) - model_keys - train_keys)
    if unknown:
        raise ConfigError(f"未知配置项: {', '.join(unknown)}")
    try:
        model_cfg = ModelConfig.model_validate({k: v for k, v in merged.items() if k in model_keys})
        train_cfg = TrainConfig.model_validate({k: v for k, v in merged.items() if k in train_keys})
    except ValidationError as e:
        raise ConfigError(f"配置校验失败: {e}") from e
    return model_cfg, train_cfg


def load_run_config(path: Path) -> tuple[ModelConfig, TrainConfig]:
    """读取 `key=value` 或扁平 JSON 配置文件并拆分。"""
    return parse_run_config(load_config_file(path))
