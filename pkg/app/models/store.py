"""模型检查点目录：config.json + vocab.json + params.bin。"""

from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from app.core.checkpoint import load_named, save_named
from app.errors import ConfigError, DataError
from app.models.zoo import Model, build_model
from app.schemas.run import ModelConfig
from app.services.corpus import Vocabulary

CONFIG_FILE = "config.json"
VOCAB_FILE = "vocab.json"
PARAMS_FILE = "params.bin"


def save_model(directory: Path, model: Model, vocab: Vocabulary) -> Path:
    """
    写出检查点目录。

    参数：
        directory: 目标目录（不存在则创建）
        model: 模型
        vocab: 与嵌入表对齐的词表

    返回：
        检查点目录
    """
    directory.mkdir(parents=True, exist_ok=True)
    payload = model.config.model_dump_json(indent=2)
    (directory / CONFIG_FILE).write_text(payload, encoding="utf-8")
    vocab.save(directory / VOCAB_FILE)
    save_named(directory / PARAMS_FILE, model.params.state())
    logger.info(f"检查点已写入 {directory} 参数量={model.params.count()}")
    return directory


def load_model(directory: Path) -> tuple[Model, Vocabulary]:
    """读取检查点目录，返回评估模式的模型与词表。"""
    config_path = directory / CONFIG_FILE
    if not config_path.exists():
        raise DataError(f"检查点缺少 {CONFIG_FILE}: {directory}")
    try:
        config = ModelConfig.model_validate_json(config_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigError(f"检查点配置不合法: {e}") from e
    vocab = Vocabulary.load(directory / VOCAB_FILE)
    if len(vocab) != config.vocab_size:
        raise DataError(f"词表大小 {len(vocab)} 与配置中的 {config.vocab_size} 不一致")
    model = build_model(config)
    model.params.load_state(load_named(directory / PARAMS_FILE))
    return model.eval_mode(), vocab
