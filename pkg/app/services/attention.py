"""
注意力服务：结构化自注意力、对称协同注意力、带抽取式监督的硬注意力，
以及以评论为中心的多头注意力推断子层（残差 + 层归一化）。
"""

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from app.core import ops
from app.core.params import ParameterSet
from app.core.tensor import Tensor
from app.errors import ConfigError, EmptySequenceError, ShapeError


# ── 注意力记录 ──────────────────────────────────────────────

@dataclass
class AttentionRecord:
    """
    一层注意力分布。

    weights 为 2D：每行是一个头/跳/查询词在 source 文本各词上的分布。
    source 取 review / summary / joint（评论接摘要）。
    """

    name: str
    source: str
    weights: np.ndarray

    def to_dict(self) -> dict:
        return {"name": self.name, "source": self.source, "weights": self.weights.tolist()}


@dataclass
class AttentionTrace:
    """推断时记录下来的逐层、逐头注意力分布，供热力图与分析使用。"""

    records: list[AttentionRecord] = field(default_factory=list)

    def add(self, name: str, source: str, weights: Tensor) -> None:
        data = weights.data
        self.records.append(AttentionRecord(name, source, np.atleast_2d(data).copy()))

    def get(self, name: str) -> AttentionRecord:
        for record in self.records:
            if record.name == name:
                return record
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.records]

    def sources(self) -> list[str]:
        seen: list[str] = []
        for record in self.records:
            if record.source not in seen:
                seen.append(record.source)
        return seen

    def by_source(self, source: str) -> list[AttentionRecord]:
        return [r for r in self.records if r.source == source]

    def __iter__(self) -> Iterator[AttentionRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def is_normalized(self, atol: float = 1e-12) -> bool:
        """每个分布非负且沿最后一维和为 1。"""
        return all(
            bool(np.all(r.weights >= 0.0)) and np.allclose(r.weights.sum(axis=-1), 1.0, rtol=0.0, atol=atol)
            for r in self.records
        )

    def to_dict(self) -> dict:
        return {"records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, payload: dict) -> "AttentionTrace":
        return cls([
            AttentionRecord(r["name"], r["source"], np.asarray(r["weights"], dtype=np.float64))
            for r in payload.get("records", [])
        ])


# ── 结构化自注意力 ──────────────────────────────────────────

@dataclass
class SelfAttentionParams:
    """W₁ (d_a × D) 与打分向量 w₂ (r × d_a)。"""

    projection: Tensor
    scorer: Tensor

    @property
    def hops(self) -> int:
        return self.scorer.shape[0]

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, input_size: int, attention_dim: int, hops: int) -> "SelfAttentionParams":
        if hops < 1 or attention_dim < 1:
            raise ConfigError(f"自注意力跳数与维度必须 ≥ 1: hops={hops}, d_a={attention_dim}")
        return cls(
            projection=params.uniform(f"{prefix}.projection", (attention_dim, input_size), 1.0 / math.sqrt(input_size)),
            scorer=params.uniform(f"{prefix}.scorer", (hops, attention_dim), 1.0 / math.sqrt(attention_dim)),
        )


def self_attention(params: SelfAttentionParams, hidden: Tensor) -> tuple[Tensor, Tensor]:
    """
    结构化自注意力：weights = softmax_tokens(w₂·tanh(W₁Hᵀ))，context = weights·H。

    参数：
        params: 自注意力参数
        hidden: n×D 隐状态

    返回：
        (context r×D, weights r×n)
    """
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise EmptySequenceError(f"自注意力需要非空序列，实际形状 {hidden.shape}")
    scores = ops.matmul(params.scorer, ops.tanh(ops.matmul(params.projection, ops.transpose(hidden))))
    weights = ops.softmax(scores, axis=1)
    return ops.matmul(weights, hidden), weights


# ── 对称协同注意力 ──────────────────────────────────────────

@dataclass
class CoAttentionParams:
    """W^w、W^s 均为 D×D，scale 为缩放维度 d。"""

    review_proj: Tensor
    summary_proj: Tensor
    scale: float

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, width: int) -> "CoAttentionParams":
        bound = 1.0 / math.sqrt(width)
        return cls(
            review_proj=params.uniform(f"{prefix}.review_proj", (width, width), bound),
            summary_proj=params.uniform(f"{prefix}.summary_proj", (width, width), bound),
            scale=float(width),
        )


@dataclass
class CoAttentionResult:
    review: Tensor
    summary: Tensor
    scores: Tensor
    review_weights: Tensor
    summary_weights: Tensor

    def __iter__(self):
        # 允许按 (H^w_co, H^s_co, A) 解包
        return iter((self.review, self.summary, self.scores))


def co_attention(params: CoAttentionParams, review: Tensor, summary: Tensor) -> CoAttentionResult:
    """
    共享打分矩阵 A = H^w W^w (H^s W^s)ᵀ 的双向注意力，两侧都带残差：

    H^w_co = H^w + softmax_row(A/√d) H^s，H^s_co = H^s + softmax_row(Aᵀ/√d) H^w。
    """
    if review.shape[0] == 0 or summary.shape[0] == 0:
        raise EmptySequenceError("协同注意力两侧序列都不能为空")
    if review.shape[1] != summary.shape[1]:
        raise ShapeError(f"协同注意力两侧宽度不一致: {review.shape} 与 {summary.shape}")
    scores = ops.matmul(
        ops.matmul(review, params.review_proj),
        ops.transpose(ops.matmul(summary, params.summary_proj)),
    )
    inv = 1.0 / math.sqrt(params.scale)
    review_weights = ops.softmax(ops.scale(scores, inv), axis=1)
    summary_weights = ops.softmax(ops.scale(ops.transpose(scores), inv), axis=1)
    return CoAttentionResult(
        review=ops.add(review, ops.matmul(review_weights, summary)),
        summary=ops.add(summary, ops.matmul(summary_weights, review)),
        scores=scores,
        review_weights=review_weights,
        summary_weights=summary_weights,
    )


# ── 硬注意力 ────────────────────────────────────────────────

def extract_overlap_labels(review: Sequence[str], summary: Sequence[str]) -> np.ndarray:
    """评论中出现在摘要词集合里的词（忽略大小写）标 1，保持评论原顺序。"""
    summary_set = {token.casefold() for token in summary}
    return np.array([1 if token.casefold() in summary_set else 0 for token in review], dtype=np.int64)


def hard_attention_loss(weights: Tensor, labels: Sequence[int]) -> Tensor:
    """
    注意力分布与归一化抽取标签之间的交叉熵 −Σ q_t log α_t，q = labels / Σlabels。

    标签全零时返回常数 0。
    """
    label_array = np.asarray(labels, dtype=np.float64)
    if weights.ndim != 1 or label_array.shape != weights.shape:
        raise ShapeError(f"硬注意力标签形状 {label_array.shape} 与注意力形状 {weights.shape} 不符")
    total = label_array.sum()
    if total == 0.0:
        return Tensor(0.0)
    target = Tensor(label_array / total)
    return ops.scale(ops.reduce_sum(ops.mul(target, ops.log(weights))), -1.0)


# ── 注意力推断子层 ──────────────────────────────────────────

@dataclass
class InferenceHead:
    query: Tensor
    key: Tensor
    value: Tensor


@dataclass
class AttentionInferenceParams:
    """k 个头，每头 W^Q、W^K、W^V 为 D × D/k；以及层归一化的 gain、bias。"""

    heads: list[InferenceHead]
    gain: Tensor
    bias: Tensor

    @property
    def width(self) -> int:
        return self.gain.shape[0]

    @property
    def head_dim(self) -> int:
        return self.width // len(self.heads)

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, width: int, num_heads: int) -> "AttentionInferenceParams":
        if num_heads < 1 or width % num_heads:
            raise ConfigError(f"头数 {num_heads} 必须整除隐层宽度 {width}")
        head_dim = width // num_heads
        bound = 1.0 / math.sqrt(width)
        heads = [
            InferenceHead(
                query=params.uniform(f"{prefix}.head{i}.query", (width, head_dim), bound),
                key=params.uniform(f"{prefix}.head{i}.key", (width, head_dim), bound),
                value=params.uniform(f"{prefix}.head{i}.value", (width, head_dim), bound),
            )
            for i in range(num_heads)
        ]
        return cls(heads, params.ones(f"{prefix}.norm.gain", (width,)), params.zeros(f"{prefix}.norm.bias", (width,)))


def attention_inference(
    params: AttentionInferenceParams,
    review: Tensor,
    summary_vector: Tensor,
    eps: float = 1e-5,
) -> tuple[Tensor, Tensor]:
    """
    评论各词对池化后的摘要向量做多头注意力，再残差相加并层归一化。

    每个头：α = softmax_tokens(H^w W^Q (h^s W^K)ᵀ / √(D/k))，第 t 行输出 α_t · h^s W^V。

    参数：
        params: 推断子层参数
        review: n×D 评论隐状态
        summary_vector: D 维摘要向量 h^s
        eps: 层归一化 eps

    返回：
        (H_out n×D, 各头分布 k×n)
    """
    if review.ndim != 2 or review.shape[0] == 0:
        raise EmptySequenceError(f"注意力推断需要非空评论序列，实际形状 {review.shape}")
    if review.shape[1] != params.width or summary_vector.shape != (params.width,):
        raise ShapeError(
            f"注意力推断宽度不符: H={review.shape}, h^s={summary_vector.shape}, 期望 {params.width}"
        )
    inv = 1.0 / math.sqrt(params.head_dim)
    mixed: list[Tensor] = []
    alphas: list[Tensor] = []
    for head in params.heads:
        scores = ops.matmul(ops.matmul(review, head.query), ops.matmul(summary_vector, head.key))
        alpha = ops.softmax(ops.scale(scores, inv), axis=0)
        mixed.append(ops.outer(alpha, ops.matmul(summary_vector, head.value)))
        alphas.append(alpha)
    merged = mixed[0] if len(mixed) == 1 else ops.concat_many(mixed, axis=1)
    out = ops.layer_norm(ops.add(review, merged), params.gain, params.bias, eps)
    return out, ops.stack(alphas)

