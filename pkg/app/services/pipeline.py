"""训练流水线协调器：串联加载语料、建词表、载入词向量、建模、训练、保存 6 个阶段。"""

from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

from loguru import logger

from app.config import settings
from app.models.store import save_model
from app.models.zoo import Model, build_model
from app.schemas.analysis import EpochRecord
from app.schemas.run import ModelConfig, TrainConfig
from app.services.corpus import (
    EncodedExample,
    Example,
    Vocabulary,
    encode_example,
    load_corpus,
    load_embeddings,
    split_corpus,
)
from app.services.trainer import train

HISTORY_FILE = "history.jsonl"


class RunStage(str, Enum):
    """训练流水线阶段。"""

    PENDING = "pending"
    LOADING_CORPUS = "loading_corpus"
    BUILDING_VOCAB = "building_vocab"
    LOADING_EMBEDDINGS = "loading_embeddings"
    BUILDING_MODEL = "building_model"
    TRAINING = "training"
    SAVING = "saving"
    COMPLETED = "completed"


ProgressCallback = Callable[[RunStage, int, str], None]


class RunSummary(NamedTuple):
    checkpoint: Path
    history_path: Path
    best_dev_accuracy: float
    epochs: int


def encode_corpus(corpus: Sequence[Example], vocab: Vocabulary) -> list[EncodedExample]:
    return [
        encode_example(example, vocab, settings.max_review_len, settings.max_summary_len)
        for example in corpus
    ]


def write_history(path: Path, history: Sequence[EpochRecord]) -> None:
    """逐轮历史写成 JSON Lines。"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in history:
            f.write(record.model_dump_json() + "\n")


class TrainingRun:
    """
    一次完整的训练运行。

    6 个阶段：
    1. 加载语料 (0-10%)
    2. 构建词表 (10-15%)
    3. 载入词向量 (15-20%)
    4. 构建模型 (20-25%)
    5. 训练 (25-95%)
    6. 保存检查点与历史 (95-100%)
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        train_path: Path,
        out_dir: Path,
        dev_path: Optional[Path] = None,
        embeddings_path: Optional[Path] = None,
        progress_callback: Optional[ProgressCallback] = None,
    ):
        """
        初始化训练运行。

        参数：
            model_config: 模型配置（vocab_size 会按构建出的词表改写）
            train_config: 训练配置
            train_path: 训练语料
            out_dir: 检查点目录（历史记录也写在这里）
            dev_path: 验证语料；缺省时从训练语料末尾切出 10%
            embeddings_path: GloVe 文本格式词向量，可选
            progress_callback: 接收 (阶段, 百分比, 消息)
        """
        self.model_config = model_config
        self.train_config = train_config
        self.train_path = train_path
        self.dev_path = dev_path
        self.out_dir = out_dir
        self.embeddings_path = embeddings_path
        self.progress_callback = progress_callback
        self.model: Optional[Model] = None
        self.stage = RunStage.PENDING

    def _update_status(self, stage: RunStage, progress: int, message: str) -> None:
        self.stage = stage
        logger.info(f"[{progress:3d}%] {stage.value}: {message}")
        if self.progress_callback:
            self.progress_callback(stage, progress, message)

    def run(self) -> RunSummary:
        """执行全部阶段，返回检查点位置与最佳 dev 准确率。"""
        # ── 阶段 1：加载语料 ────────────────────────────────
        self._update_status(RunStage.LOADING_CORPUS, 2, f"读取 {self.train_path}")
        corpus = load_corpus(self.train_path)
        if self.dev_path is not None:
            dev_corpus = load_corpus(self.dev_path)
        else:
            corpus, dev_corpus, _ = split_corpus(corpus, 0.1, 0.0)
            if not dev_corpus:
                logger.warning("训练语料过小，无法切出验证集，改用训练集本身做早停")
                dev_corpus = list(corpus)
        self._update_status(RunStage.LOADING_CORPUS, 10, f"train={len(corpus)} dev={len(dev_corpus)}")

        # ── 阶段 2：构建词表（只用训练集）────────────────────
        vocab = Vocabulary.build(corpus, settings.min_freq)
        self._update_status(RunStage.BUILDING_VOCAB, 15, f"词表大小 {len(vocab)}")

        # ── 阶段 3：词向量 ──────────────────────────────────
        config = self.model_config.model_copy(update={"vocab_size": len(vocab)})
        table = None
        if self.embeddings_path is not None:
            table = load_embeddings(self.embeddings_path, vocab, config.embedding_dim, self.train_config.seed)
            self._update_status(RunStage.LOADING_EMBEDDINGS, 20, f"命中率 {table.match_rate:.1%}")
        else:
            self._update_status(RunStage.LOADING_EMBEDDINGS, 20, "未提供词向量，使用随机初始化")

        # ── 阶段 4：构建模型 ────────────────────────────────
        model = build_model(config, self.train_config.seed)
        if table is not None:
            model.set_embeddings(table.vectors)
        self.model = model
        self._update_status(RunStage.BUILDING_MODEL, 25, f"{config.variant.value} 参数量 {model.params.count()}")

        # ── 阶段 5：训练 ────────────────────────────────────
        epochs = self.train_config.epochs

        def epoch_progress(record: EpochRecord) -> None:
            self._update_status(
                RunStage.TRAINING,
                25 + int(record.epoch / epochs * 70),
                f"epoch {record.epoch}/{epochs} loss={record.train_loss:.4f} dev_acc={record.dev_accuracy:.4f}",
            )

        result = train(model, encode_corpus(corpus, vocab), encode_corpus(dev_corpus, vocab), self.train_config, epoch_progress)

        # ── 阶段 6：保存 ────────────────────────────────────
        self._update_status(RunStage.SAVING, 96, f"写入检查点 {self.out_dir}")
        save_model(self.out_dir, result.model, vocab)
        history_path = self.out_dir / HISTORY_FILE
        write_history(history_path, result.history)
        best = max(r.dev_accuracy for r in result.history)
        self._update_status(RunStage.COMPLETED, 100, f"完成，最佳 dev 准确率 {best:.4f}")
        return RunSummary(self.out_dir, history_path, best, len(result.history))
