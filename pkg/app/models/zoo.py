"""
模型库：把嵌入、BiLSTM 编码器、各类注意力与输出层组装成全部变体，
对外提供统一的 forward / predict 接口。
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger

from app.core import ops
from app.core.params import ParameterSet
from app.core.tensor import Tensor
from app.errors import ConfigError, EmptySequenceError, ShapeError
from app.models.variant import ModelVariant
from app.schemas.run import ModelConfig
from app.services.attention import (
    AttentionInferenceParams,
    AttentionTrace,
    CoAttentionParams,
    SelfAttentionParams,
    attention_inference,
    co_attention,
    extract_overlap_labels,
    self_attention,
)
from app.services.corpus import EncodedExample
from app.services.encoder import BiLstmEncoder, encode_sequence


@dataclass
class ForwardOutput:
    """一次前向的结果。hard_weights / hard_labels 仅 joint_hard 变体有值。"""

    probs: Tensor
    trace: AttentionTrace
    hard_weights: Optional[Tensor] = None
    hard_labels: Optional[np.ndarray] = None

    def __iter__(self):
        # 允许按 (p, trace) 解包
        return iter((self.probs, self.trace))


@dataclass
class CentricLayer:
    """以评论为中心的一层：序列编码子层 + 注意力推断子层。"""

    encoder: BiLstmEncoder
    inference: AttentionInferenceParams


@dataclass
class _Modules:
    encoders: dict[str, BiLstmEncoder] = field(default_factory=dict)
    attentions: dict[str, SelfAttentionParams] = field(default_factory=dict)
    co: Optional[CoAttentionParams] = None
    layers: list[CentricLayer] = field(default_factory=list)


class Model:
    """一个变体的全部参数与前向逻辑。评估期间只读，可被多个线程并发调用 forward。"""

    def __init__(self, config: ModelConfig, seed: int = 13):
        """
        按固定顺序登记并初始化参数：嵌入 → 编码器/注意力 → 输出层。

        参数：
            config: 模型配置
            seed: 随机种子；初始化与 dropout 各用一个派生出的随机源
        """
        self.config = config
        self.seed = seed
        init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
        self.params = ParameterSet(np.random.default_rng(init_seq))
        self.dropout_rng = np.random.default_rng(dropout_seq)
        self.training = False

        e, d_h, width = config.embedding_dim, config.hidden_size, config.width
        self.embedding = self.params.uniform(
            "embedding", (config.vocab_size, e), 0.1, requires_grad=config.trainable_embeddings
        )
        self.modules = _Modules()
        variant = config.variant
        if variant.is_single_text or variant.is_joint_sequence:
            self.modules.encoders["encoder"] = BiLstmEncoder.create(self.params, "encoder", e, d_h)
            if variant.uses_self_attention:
                hops = 1 if variant is ModelVariant.JOINT_HARD else config.attention_hops
                self.modules.attentions["self_attention"] = SelfAttentionParams.create(
                    self.params, "self_attention", width, config.attention_dim, hops
                )
            out_width = width
        elif variant.is_separate or variant.is_coattn:
            for side in ("review", "summary"):
                self.modules.encoders[side] = BiLstmEncoder.create(self.params, f"{side}_encoder", e, d_h)
            if variant is ModelVariant.SEPARATE_SELFATTN:
                for side in ("review", "summary"):
                    self.modules.attentions[side] = SelfAttentionParams.create(
                        self.params, f"{side}_attention", width, config.attention_dim, config.attention_hops
                    )
            if variant.is_coattn:
                self.modules.co = CoAttentionParams.create(self.params, "co_attention", width)
            out_width = width if variant.coattn_mode in ("review", "summary") else 2 * width
        elif variant.is_centric:
            self.modules.encoders["context"] = BiLstmEncoder.create(self.params, "context_encoder", e, d_h)
            for layer in range(config.layers):
                self.modules.layers.append(CentricLayer(
                    encoder=BiLstmEncoder.create(self.params, f"layers.{layer}.encoder", e if layer == 0 else width, d_h),
                    inference=AttentionInferenceParams.create(self.params, f"layers.{layer}.inference", width, config.heads),
                ))
            out_width = width
        else:
            raise ConfigError(f"未知模型变体: {variant}")

        bound = 1.0 / math.sqrt(out_width)
        self.output_weight = self.params.uniform("output.weight", (out_width, config.num_classes), bound)
        self.output_bias = self.params.zeros("output.bias", (config.num_classes,))

    # ── 模式切换 ──

    def train_mode(self) -> "Model":
        self.training = True
        return self

    def eval_mode(self) -> "Model":
        self.training = False
        return self

    @property
    def variant(self) -> ModelVariant:
        return self.config.variant

    def set_embeddings(self, vectors: np.ndarray) -> None:
        """用预训练词向量覆盖嵌入表。"""
        if vectors.shape != self.embedding.shape:
            raise ShapeError(f"词向量形状 {vectors.shape} 与嵌入表 {self.embedding.shape} 不符")
        self.embedding.data = np.array(vectors, dtype=np.float64)

    # ── 前向 ──

    def _drop(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.config.dropout, self.training, self.dropout_rng)

    def _embed(self, ids: list[int]) -> Tensor:
        return self._drop(ops.embedding_lookup(self.embedding, ids))

    def _encode(self, name: str, x: Tensor) -> Tensor:
        return self._drop(encode_sequence(self.modules.encoders[name], x))

    def _summarize(self, hidden: Tensor, attention: Optional[str], source: str, trace: AttentionTrace) -> Tensor:
        """平均池化；若有自注意力，先得到 r×D 的多跳表示再在跳上池化。"""
        if attention is None:
            return ops.average_pool(hidden)
        context, weights = self_attention(self.modules.attentions[attention], hidden)
        trace.add(attention, source, weights)
        return ops.average_pool(context)

    def _classify(self, pooled: Tensor) -> Tensor:
        logits = ops.add(ops.matmul(pooled, self.output_weight), self.output_bias)
        return ops.softmax(logits, axis=0)

    def forward(self, example: EncodedExample) -> ForwardOutput:
        """
        对一条已编码样本计算 5 类概率分布，并记录所有注意力分布。

        参数：
            example: 已映射为 id 的样本

        返回：
            ForwardOutput(p, trace, ...)
        """
        variant = self.variant
        trace = AttentionTrace()
        if not example.review and variant.uses_review:
            raise EmptySequenceError("评论为空，无法前向")
        if not example.summary and variant.uses_summary:
            raise EmptySequenceError(f"{variant.value} 需要非空摘要")

        if variant.is_single_text:
            side = "review" if variant.is_review_only else "summary"
            ids = example.review if variant.is_review_only else example.summary
            hidden = self._encode("encoder", self._embed(ids))
            attention = "self_attention" if variant.uses_self_attention else None
            return ForwardOutput(self._classify(self._summarize(hidden, attention, side, trace)), trace)

        if variant.is_joint_sequence:
            hidden = self._encode("encoder", self._embed(list(example.review) + list(example.summary)))
            if variant is ModelVariant.JOINT_HARD:
                context, weights = self_attention(self.modules.attentions["self_attention"], hidden)
                trace.add("hard_attention", "joint", weights)
                labels = np.concatenate([
                    extract_overlap_labels(example.review_tokens, example.summary_tokens),
                    np.zeros(len(example.summary), dtype=np.int64),
                ])
                return ForwardOutput(
                    self._classify(ops.average_pool(context)), trace, ops.select_row(weights, 0), labels
                )
            attention = "self_attention" if variant.uses_self_attention else None
            return ForwardOutput(self._classify(self._summarize(hidden, attention, "joint", trace)), trace)

        review = self._encode("review", self._embed(example.review)) if not variant.is_centric else None
        summary = self._encode("summary", self._embed(example.summary)) if not variant.is_centric else None

        if variant.is_separate:
            attn = variant is ModelVariant.SEPARATE_SELFATTN
            pooled_review = self._summarize(review, "review" if attn else None, "review", trace)
            pooled_summary = self._summarize(summary, "summary" if attn else None, "summary", trace)
            return ForwardOutput(self._classify(ops.concat(pooled_review, pooled_summary)), trace)

        if variant.is_coattn:
            result = co_attention(self.modules.co, review, summary)
            trace.add("co_attention.review", "summary", result.review_weights)
            trace.add("co_attention.summary", "review", result.summary_weights)
            mode = variant.coattn_mode
            if mode == "review":
                pooled = ops.average_pool(result.review)
            elif mode == "summary":
                pooled = ops.average_pool(result.summary)
            else:
                pooled = ops.concat(ops.average_pool(result.review), ops.average_pool(result.summary))
            return ForwardOutput(self._classify(pooled), trace)

        return ForwardOutput(self._classify(self._refine(example, trace)), trace)

    def _refine(self, example: EncodedExample, trace: AttentionTrace) -> Tensor:
        """逐层编码主文本并以池化后的辅助文本向量 h^s 做注意力推断，返回最终池化表示。"""
        if self.variant is ModelVariant.REVIEW_CENTRIC:
            main_ids, context_ids, main_side = example.review, example.summary, "review"
        else:
            main_ids, context_ids, main_side = example.summary, example.review, "summary"
        context_vector = ops.average_pool(self._encode("context", self._embed(context_ids)))
        hidden = self._embed(main_ids)
        for index, layer in enumerate(self.modules.layers):
            encoded = self._drop(encode_sequence(layer.encoder, hidden))
            hidden, alphas = attention_inference(layer.inference, encoded, context_vector, self.config.layer_norm_eps)
            trace.add(f"layer{index}.inference", main_side, alphas)
        return ops.average_pool(hidden)

    def predict(self, example: EncodedExample) -> int:
        """返回 1 + argmax p（并列时取最小类别）。"""
        return rating_from_probs(self.forward(example).probs.data)


def rating_from_probs(probs: np.ndarray) -> int:
    """np.argmax 在并列时返回第一个下标，即最小类别。"""
    return int(np.argmax(probs)) + 1


def build_model(config: ModelConfig, seed: int = 13) -> Model:
    """
    校验配置并构建模型。

    参数：
        config: 模型配置
        seed: 初始化随机种子

    返回：
        参数已按种子初始化的模型
    """
    if config.vocab_size < 2:
        raise ConfigError(f"词表大小至少为 2（PAD、UNK），实际 {config.vocab_size}")
    if config.variant.is_centric and config.width % config.heads:
        raise ConfigError(f"头数 {config.heads} 必须整除隐层宽度 {config.width}")
    model = Model(config, seed)
    logger.info(
        f"模型构建完成 variant={config.variant.value} 参数量={model.params.count()} "
        f"可训练={model.params.count(trainable_only=True)}"
    )
    return model


def forward(model: Model, example: EncodedExample) -> ForwardOutput:
    return model.forward(example)


def predict(model: Model, example: EncodedExample) -> int:
    return model.predict(example)
