"""
梯度校验套件：逐算子中心差分检查，以及对每个模型变体的整模型参数抽查。
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from loguru import logger

from app.config import settings
from app.core import ops
from app.core.gradcheck import check_gradients, relative_error
from app.core.tensor import Tensor, backward, no_grad
from app.models.variant import ModelVariant
from app.models.zoo import build_model
from app.schemas.run import ModelConfig
from app.services.attention import (
    AttentionInferenceParams,
    CoAttentionParams,
    InferenceHead,
    SelfAttentionParams,
    attention_inference,
    co_attention,
    hard_attention_loss,
    self_attention,
)
from app.services.corpus import EncodedExample
from app.services.encoder import LstmParams, lstm_step
from app.services.trainer import example_loss

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


@dataclass
class GradcheckResult:
    """一项校验的最大相对误差。"""

    name: str
    max_error: float
    checks: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_error": self.max_error,
            "checks": self.checks,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


OpCase = tuple[str, Callable[..., Tensor], list[list[tuple[int, ...]]]]


def _positive(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=shape)


def _dropout_fixed(x: Tensor) -> Tensor:
    # 每次调用重新播种，保证差分时掩码不变
    return ops.dropout(x, 0.3, True, np.random.default_rng(7))


def _lstm_step(x, h, c, w_ih, w_hh, bias) -> Tensor:
    h_t, c_t = lstm_step(LstmParams(w_ih, w_hh, bias), x, h, c)
    return ops.concat(h_t, c_t)


def _self_attention(hidden, projection, scorer) -> Tensor:
    context, weights = self_attention(SelfAttentionParams(projection, scorer), hidden)
    return ops.concat(context, weights, axis=1)


def _co_attention(review, summary, w_r, w_s) -> Tensor:
    result = co_attention(CoAttentionParams(w_r, w_s, float(review.shape[1])), review, summary)
    return ops.concat(result.review, result.summary, axis=0)


def _inference(review, summary_vector, q0, k0, v0, q1, k1, v1, gain, bias) -> Tensor:
    params = AttentionInferenceParams([InferenceHead(q0, k0, v0), InferenceHead(q1, k1, v1)], gain, bias)
    out, alphas = attention_inference(params, review, summary_vector)
    return ops.concat(out, ops.transpose(alphas), axis=1)


def _op_cases() -> list[OpCase]:
    """每个算子至少三组形状。"""
    return [
        ("matmul", ops.matmul, [[(3, 4), (4, 2)], [(4,), (4, 3)], [(2, 5), (5,)], [(6,), (6,)]]),
        ("transpose", ops.transpose, [[(2, 3)], [(1, 4)], [(5, 5)]]),
        ("outer", ops.outer, [[(3,), (2,)], [(1,), (4,)], [(5,), (5,)]]),
        ("add", ops.add, [[(3,), (3,)], [(2, 4), (2, 4)], [(1, 1), (1, 1)]]),
        ("sub", ops.sub, [[(3,), (3,)], [(2, 4), (2, 4)], [(4, 1), (4, 1)]]),
        ("mul", ops.mul, [[(3,), (3,)], [(2, 4), (2, 4)], [(3, 3), (3, 3)]]),
        ("scale", lambda x: ops.scale(x, -1.7), [[(3,)], [(2, 4)], [(1,)]]),
        ("tanh", ops.tanh, [[(5,)], [(2, 3)], [(4, 4)]]),
        ("sigmoid", ops.sigmoid, [[(5,)], [(2, 3)], [(4, 4)]]),
        ("reduce_sum", ops.reduce_sum, [[(5,)], [(2, 3)], [(1, 1)]]),
        ("concat_axis0", lambda a, b: ops.concat(a, b, axis=0), [[(2,), (3,)], [(1, 4), (3, 4)], [(2, 2), (2, 2)]]),
        ("concat_axis1", lambda a, b: ops.concat(a, b, axis=1), [[(2, 1), (2, 3)], [(3, 2), (3, 2)], [(1, 1), (1, 4)]]),
        ("narrow", lambda x: ops.narrow(x, 1, 3, axis=x.ndim - 1), [[(4,)], [(2, 5)], [(3, 3)]]),
        ("select_row", lambda x: ops.select_row(x, x.shape[0] - 1), [[(2, 3)], [(1, 4)], [(5, 2)]]),
        ("stack", lambda a, b: ops.stack([a, b, a]), [[(3,), (3,)], [(1,), (1,)], [(5,), (5,)]]),
        ("softmax_row", lambda x: ops.softmax(x, axis=-1), [[(5,)], [(2, 4)], [(3, 1)]]),
        ("softmax_col", lambda x: ops.softmax(x, axis=0), [[(4, 2)], [(1, 3)], [(6,)]]),
        ("layer_norm", ops.layer_norm, [[(2, 4), (4,), (4,)], [(1, 3), (3,), (3,)], [(5, 6), (6,), (6,)]]),
        ("average_pool", ops.average_pool, [[(3, 2)], [(1, 4)], [(6, 6)]]),
        ("dropout", _dropout_fixed, [[(6,)], [(3, 4)], [(10, 2)]]),
        ("lstm_scan", ops.lstm_scan, [[(3, 2), (2, 8), (2, 8), (8,)], [(1, 4), (4, 12), (3, 12), (12,)], [(5, 3), (3, 4), (1, 4), (4,)]]),
        ("lstm_scan_reverse", lambda x, a, b, c: ops.lstm_scan(x, a, b, c, reverse=True),
         [[(3, 2), (2, 8), (2, 8), (8,)], [(1, 4), (4, 12), (3, 12), (12,)], [(5, 3), (3, 4), (1, 4), (4,)]]),
        ("lstm_step", _lstm_step, [[(2,), (2,), (2,), (2, 8), (2, 8), (8,)], [(3,), (1,), (1,), (3, 4), (1, 4), (4,)], [(1,), (3,), (3,), (1, 12), (3, 12), (12,)]]),
        ("self_attention", _self_attention, [[(4, 6), (3, 6), (2, 3)], [(1, 2), (2, 2), (1, 2)], [(5, 4), (4, 4), (3, 4)]]),
        ("co_attention", _co_attention, [[(4, 3), (2, 3), (3, 3), (3, 3)], [(1, 2), (1, 2), (2, 2), (2, 2)], [(5, 4), (3, 4), (4, 4), (4, 4)]]),
        ("attention_inference", _inference, [
            [(3, 4), (4,), (4, 2), (4, 2), (4, 2), (4, 2), (4, 2), (4, 2), (4,), (4,)],
            [(1, 2), (2,), (2, 1), (2, 1), (2, 1), (2, 1), (2, 1), (2, 1), (2,), (2,)],
            [(5, 6), (6,), (6, 3), (6, 3), (6, 3), (6, 3), (6, 3), (6, 3), (6,), (6,)],
        ]),
    ]


def _positive_cases() -> list[OpCase]:
    """定义域受限的算子：输入取正数。"""
    return [
        ("log", ops.log, [[(5,)], [(2, 3)], [(1, 1)]]),
        ("cross_entropy", lambda p: ops.cross_entropy(p, 1), [[(3,)], [(5,)], [(2,)]]),
        ("hard_attention_loss", lambda w: hard_attention_loss(w, [1, 0, 1, 1][: w.shape[0]] + [0] * max(0, w.shape[0] - 4)),
         [[(4,)], [(3,)], [(6,)]]),
    ]


def _embedding_cases(rng: np.random.Generator, step: float) -> GradcheckResult:
    errors = []
    for shape, ids in (((5, 3), [0, 2, 2, 4]), ((2, 4), [1]), ((6, 2), [5, 0, 5, 5, 3])):
        table = rng.standard_normal(shape)
        errors.append(check_gradients(lambda t, i=ids: ops.embedding_lookup(t, i), [table], step))
    return GradcheckResult("embedding_lookup", max(errors), len(errors), OP_TOLERANCE)


def check_ops(step: Optional[float] = None, seed: int = 0) -> list[GradcheckResult]:
    """
    对每个算子在多组形状上做中心差分校验。

    参数：
        step: 差分步长，默认取 settings.gradcheck_step
        seed: 输入数值的随机种子

    返回：
        每个算子一条结果
    """
    step = step or settings.gradcheck_step
    rng = np.random.default_rng(seed)
    results: list[GradcheckResult] = []
    groups: Iterable[tuple[list[OpCase], Callable[[tuple[int, ...]], np.ndarray]]] = (
        (_op_cases(), lambda shape: rng.standard_normal(shape) * 0.8),
        (_positive_cases(), lambda shape: _positive(shape, rng)),
    )
    for cases, sampler in groups:
        for name, build, shape_sets in cases:
            errors = [check_gradients(build, [sampler(s) for s in shapes], step) for shapes in shape_sets]
            result = GradcheckResult(name, max(errors), len(errors), OP_TOLERANCE)
            logger.debug(f"算子梯度校验 op={name} max_err={result.max_error:.3e}")
            results.append(result)
    results.append(_embedding_cases(rng, step))
    return results


def small_model_config(variant: ModelVariant, vocab_size: int = 12) -> ModelConfig:
    """梯度抽查用的小模型：e=6, d_h=3，dropout 关闭。"""
    return ModelConfig(
        variant=variant,
        vocab_size=vocab_size,
        embedding_dim=6,
        hidden_size=3,
        heads=2,
        layers=2,
        dropout=0.0,
        attention_hops=2,
        attention_dim=4,
    )


def spot_check_example() -> EncodedExample:
    """评论与摘要共享两个词，保证硬注意力标签非零。"""
    review_tokens = ("the", "toy", "broke", "fast", "sadly")
    summary_tokens = ("broke", "fast")
    vocab = {t: i + 2 for i, t in enumerate(dict.fromkeys(review_tokens + summary_tokens))}
    return EncodedExample(
        [vocab[t] for t in review_tokens],
        [vocab[t] for t in summary_tokens],
        2,
        review_tokens,
        summary_tokens,
    )


def check_model(
    variant: ModelVariant,
    entries: int = 20,
    step: Optional[float] = None,
    seed: int = 0,
) -> GradcheckResult:
    """
    整模型抽查：随机挑 entries 个梯度非零的参数元素，与中心差分比较。

    模型处于评估模式（dropout 关闭）；损失含 joint_hard 的硬注意力项。
    """
    step = step or settings.model_gradcheck_step
    model = build_model(small_model_config(variant), seed=seed).eval_mode()
    example = spot_check_example()
    model.params.zero_grad()
    backward(example_loss(model, example))

    candidates: list[tuple[str, tuple[int, ...]]] = []
    for name, param in model.params.trainable().items():
        if param.grad is None:
            continue
        for index in zip(*np.nonzero(param.grad)):
            candidates.append((name, tuple(int(i) for i in index)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=min(entries, len(candidates)), replace=False)

    analytic = np.empty(len(chosen))
    numeric = np.empty(len(chosen))
    for k, c in enumerate(chosen):
        name, index = candidates[int(c)]
        param = model.params[name]
        analytic[k] = param.grad[index]
        original = param.data[index]
        with no_grad():
            param.data[index] = original + step
            plus = example_loss(model, example).item()
            param.data[index] = original - step
            minus = example_loss(model, example).item()
        param.data[index] = original
        numeric[k] = (plus - minus) / (2.0 * step)
    result = GradcheckResult(f"model:{variant.value}", relative_error(analytic, numeric), len(chosen), MODEL_TOLERANCE)
    logger.debug(f"模型梯度抽查 variant={variant.value} max_err={result.max_error:.3e} entries={len(chosen)}")
    return result


def run_suite(variants: Optional[Iterable[ModelVariant]] = None, seed: int = 0) -> list[GradcheckResult]:
    """算子校验 + 每个变体的整模型抽查。"""
    results = check_ops(seed=seed)
    for variant in variants if variants is not None else ModelVariant:
        results.append(check_model(variant, seed=seed))
    failed = [r.name for r in results if not r.passed]
    logger.info(f"梯度校验完成 共 {len(results)} 项，未通过 {len(failed)} 项{': ' + ', '.join(failed) if failed else ''}")
    return results
