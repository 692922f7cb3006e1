"""
互补性实验：在同一份合成语料上训练若干变体，比较测试准确率并做冲突集划分。

仅评论 / 仅摘要模型的预测决定冲突集；其余变体只参与各子集准确率统计。
"""

from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from loguru import logger

from app.errors import ConfigError
from app.models.variant import ModelVariant
from app.models.zoo import build_model
from app.schemas.analysis import ExperimentReport, PredictionRecord, VariantScore
from app.schemas.data import SyntheticSpec
from app.schemas.run import ModelConfig, TrainConfig
from app.services.analysis import conflicting_set, prediction_records, write_predictions
from app.services.corpus import EncodedExample, Vocabulary
from app.services.pipeline import encode_corpus
from app.services.synthetic import expected_conflict_fraction, gen_synthetic
from app.services.trainer import evaluate, train

DEFAULT_VARIANTS = (
    ModelVariant.REVIEW_ONLY_POOL,
    ModelVariant.SUMMARY_ONLY_POOL,
    ModelVariant.SEPARATE_POOL,
    ModelVariant.JOINT_COATTN_CONCAT,
    ModelVariant.REVIEW_CENTRIC,
)


class ExperimentCorpus(NamedTuple):
    vocab: Vocabulary
    train: list[EncodedExample]
    dev: list[EncodedExample]
    test: list[EncodedExample]


def prepare_corpus(spec: SyntheticSpec, train_count: int, dev_count: int, test_count: int) -> ExperimentCorpus:
    """按 train / dev / test 顺序切分一份合成语料，词表只用训练部分构建。"""
    if min(train_count, dev_count, test_count) < 1:
        raise ConfigError(f"train/dev/test 样本数都必须 ≥ 1: {train_count}/{dev_count}/{test_count}")
    corpus = gen_synthetic(spec, train_count + dev_count + test_count)
    train_part = corpus[:train_count]
    dev_part = corpus[train_count:train_count + dev_count]
    test_part = corpus[train_count + dev_count:]
    vocab = Vocabulary.build(train_part, min_freq=1)
    return ExperimentCorpus(
        vocab,
        encode_corpus(train_part, vocab),
        encode_corpus(dev_part, vocab),
        encode_corpus(test_part, vocab),
    )


class ComplementarityExperiment:
    """
    一次互补性实验。

    对每个种子、每个变体：以该种子初始化并训练，在测试集上评估。
    冲突集划分取第一个种子的预测。
    """

    def __init__(
        self,
        spec: SyntheticSpec,
        model_config: ModelConfig,
        train_config: TrainConfig,
        variants: Sequence[ModelVariant] = DEFAULT_VARIANTS,
        seeds: Sequence[int] = (13,),
        train_count: int = 5000,
        dev_count: int = 500,
        test_count: int = 1000,
        out_dir: Optional[Path] = None,
    ):
        """
        参数：
            spec: 合成语料配置
            model_config: 模型超参数模板（variant 与 vocab_size 会被逐个改写）
            train_config: 训练配置（seed 会被逐个改写）
            variants: 参与实验的变体，必须包含 review_only_pool 与 summary_only_pool
            seeds: 模型初始化与训练的随机种子
            out_dir: 给出时把每个变体 × 种子的测试预测写成 JSON Lines
        """
        missing = [v.value for v in (ModelVariant.REVIEW_ONLY_POOL, ModelVariant.SUMMARY_ONLY_POOL) if v not in variants]
        if missing:
            raise ConfigError(f"实验变体缺少 {', '.join(missing)}，无法划分冲突集")
        if not seeds:
            raise ConfigError("至少需要一个随机种子")
        self.spec = spec
        self.model_config = model_config
        self.train_config = train_config
        self.variants = list(dict.fromkeys(variants))
        self.seeds = list(seeds)
        self.counts = (train_count, dev_count, test_count)
        self.out_dir = out_dir

    def _run_one(self, data: ExperimentCorpus, variant: ModelVariant, seed: int) -> tuple[float, list[PredictionRecord]]:
        config = self.model_config.model_copy(update={"variant": variant, "vocab_size": len(data.vocab)})
        model = build_model(config, seed)
        result = train(model, data.train, data.dev, self.train_config.model_copy(update={"seed": seed}))
        evaluation = evaluate(result.model, data.test, self.train_config.eval_workers)
        records = prediction_records(evaluation.predictions, [e.rating for e in data.test], variant.value)
        if self.out_dir is not None:
            write_predictions(self.out_dir / f"{variant.value}.seed{seed}.jsonl", records)
        return evaluation.accuracy, records

    def run(self) -> ExperimentReport:
        data = prepare_corpus(self.spec, *self.counts)
        logger.info(
            f"互补性实验开始 train={len(data.train)} dev={len(data.dev)} test={len(data.test)} "
            f"变体={len(self.variants)} 种子={self.seeds}"
        )
        scores: list[VariantScore] = []
        first: dict[ModelVariant, list[PredictionRecord]] = {}
        for seed in self.seeds:
            for variant in self.variants:
                accuracy, records = self._run_one(data, variant, seed)
                first.setdefault(variant, records)
                scores.append(VariantScore(variant=variant, seed=seed, accuracy=accuracy))
                logger.info(f"seed={seed} {variant.value} 测试准确率 {accuracy:.4f}")

        others = [
            records for variant, records in first.items()
            if variant not in (ModelVariant.REVIEW_ONLY_POOL, ModelVariant.SUMMARY_ONLY_POOL)
        ]
        decomposition = conflicting_set(first[ModelVariant.REVIEW_ONLY_POOL], first[ModelVariant.SUMMARY_ONLY_POOL], others)
        report = ExperimentReport(
            conflict_rate=self.spec.conflict_rate,
            expected_conflict_fraction=expected_conflict_fraction(self.spec),
            scores=scores,
            decomposition=decomposition,
        )
        logger.info(
            f"互补性实验完成 冲突比例={report.conflicting_fraction:.3f} "
            f"预期={report.expected_conflict_fraction:.3f}"
        )
        return report
