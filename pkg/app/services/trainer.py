"""
训练服务：Adam 优化、全局范数裁剪、按 dev 准确率早停，以及并行评估。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger

from app.core import ops
from app.core.tensor import Tensor, backward, no_grad
from app.errors import DataError, ShapeError
from app.models.variant import ModelVariant
from app.models.zoo import Model, rating_from_probs
from app.schemas.analysis import EpochRecord
from app.schemas.run import TrainConfig
from app.services.attention import hard_attention_loss
from app.services.corpus import EncodedExample


@dataclass
class AdamState:
    """Adam 一阶、二阶矩缓冲与步数计数。矩按参数名懒创建，形状与参数一致。"""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """
    偏差修正的 Adam 更新：m←β₁m+(1−β₁)g，v←β₂v+(1−β₂)g²，θ←θ−lr·m̂/(√v̂+ε)。

    参数：
        state: 优化器状态（步数 t 每次调用加 1）
        params: 参数名到张量
        grads: 显式梯度；为 None 时取各参数的 .grad，没有梯度的参数跳过
    """
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, param in params.items():
        grad = param.grad if grads is None else grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"参数 {name} 梯度形状 {grad.shape} 与参数 {param.shape} 不符")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        elif m.shape != param.shape:
            raise ShapeError(f"参数 {name} 的 Adam 矩形状 {m.shape} 与参数 {param.shape} 不符")
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """按全局 L2 范数裁剪梯度，返回裁剪前的范数。"""
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0:
        factor = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


def example_loss(model: Model, example: EncodedExample, hard_weight: float = 1.0) -> Tensor:
    """
    单样本损失 −log p[y]；joint_hard 变体再加 λ·硬注意力交叉熵。

    参数：
        model: 模型
        example: 已编码样本
        hard_weight: 硬注意力损失权重 λ
    """
    output = model.forward(example)
    loss = ops.cross_entropy(output.probs, example.rating - 1)
    if model.variant is ModelVariant.JOINT_HARD and output.hard_weights is not None:
        # 标签全零时辅助项为常数 0
        if np.sum(output.hard_labels) > 0:
            aux = hard_attention_loss(output.hard_weights, output.hard_labels)
            loss = ops.add(loss, ops.scale(aux, hard_weight))
    return loss


class TrainResult(NamedTuple):
    model: Model
    history: list[EpochRecord]


class EvalResult(NamedTuple):
    accuracy: float
    predictions: list[int]


def evaluate(model: Model, corpus: Sequence[EncodedExample], workers: int = 1) -> EvalResult:
    """
    在评估模式下预测整个语料，返回准确率与逐条预测。

    workers > 1 时用线程池并行只读前向；每个工作线程自行关闭求导。
    """
    if not corpus:
        raise DataError("评估语料为空")
    was_training = model.training
    model.eval_mode()

    def _predict(example: EncodedExample) -> int:
        with no_grad():
            return rating_from_probs(model.forward(example).probs.data)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                predictions = list(pool.map(_predict, corpus))
        else:
            predictions = [_predict(example) for example in corpus]
    finally:
        model.training = was_training
    correct = sum(1 for pred, example in zip(predictions, corpus) if pred == example.rating)
    return EvalResult(correct / len(corpus), predictions)


def train(
    model: Model,
    corpus: Sequence[EncodedExample],
    dev: Sequence[EncodedExample],
    config: TrainConfig,
    progress_callback: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """
    逐轮训练，保留 dev 准确率最高的参数，连续 patience 轮没有提升即停止；
    设置了 target_accuracy 时，dev 准确率达到目标也立即停止。

    批内逐样本前向并反向（梯度在参数上累加），随后裁剪并做一次 Adam 更新。

    参数：
        model: 待训练模型（会被原地修改）
        corpus: 训练集
        dev: 验证集
        config: 训练配置
        progress_callback: 每轮结束后收到该轮的 EpochRecord

    返回：
        TrainResult(恢复到最佳参数的模型, 逐轮历史)
    """
    if not corpus:
        raise DataError("训练语料为空")
    if not dev:
        raise DataError("验证语料为空")
    rng = np.random.default_rng(config.seed)
    state = AdamState.from_config(config)
    trainable = model.params.trainable()
    history: list[EpochRecord] = []
    best_accuracy = -1.0
    best_state = model.params.state()
    stale = 0

    for epoch in range(1, config.epochs + 1):
        model.train_mode()
        order = rng.permutation(len(corpus))
        batch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [corpus[int(i)] for i in order[start:start + config.batch_size]]
            model.params.zero_grad()
            scale = 1.0 / len(batch) if config.loss_reduction == "mean" else 1.0
            batch_loss = 0.0
            for example in batch:
                loss = example_loss(model, example, config.hard_attention_weight)
                batch_loss += loss.item()
                backward(ops.scale(loss, scale) if scale != 1.0 else loss)
            if config.clip_norm is not None:
                clip_grad_norm(trainable, config.clip_norm)
            adam_step(state, trainable)
            batch_losses.append(batch_loss)
            logger.debug(f"批次完成 epoch={epoch} step={state.t} loss={batch_loss:.6f}")

        accuracy = evaluate(model, dev, config.eval_workers).accuracy
        improved = accuracy > best_accuracy
        if improved:
            best_accuracy = accuracy
            best_state = model.params.state()
            stale = 0
        else:
            stale += 1
        record = EpochRecord(
            epoch=epoch,
            train_loss=sum(batch_losses) / len(corpus),
            dev_accuracy=accuracy,
            improved=improved,
            batch_losses=batch_losses,
        )
        history.append(record)
        logger.info(
            f"训练轮次完成 epoch={epoch} loss={record.train_loss:.4f} dev_acc={accuracy:.4f} "
            f"best={best_accuracy:.4f}{' *' if improved else ''}"
        )
        if progress_callback:
            progress_callback(record)
        if config.target_accuracy is not None and accuracy >= config.target_accuracy:
            logger.info(f"dev 准确率 {accuracy:.4f} 达到目标 {config.target_accuracy}，提前结束")
            break
        if stale >= config.patience:
            logger.info(f"早停：连续 {stale} 轮 dev 准确率未提升")
            break

    model.params.load_state(best_state)
    model.eval_mode()
    return TrainResult(model, history)
