"""中心有限差分梯度校验工具。"""

from typing import Callable, Sequence

import numpy as np

from app.core.ops import mul, reduce_sum
from app.core.tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """范数意义下的相对误差 ‖a−n‖ / (‖a‖+‖n‖)；两者皆零时为 0。"""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_gradient(objective: Callable[[], float], array: np.ndarray, step: float) -> np.ndarray:
    """
    原地扰动 array 的每个元素，用中心差分估计 objective 的梯度，结束后恢复原值。

    参数：
        objective: 无参函数，返回当前数值下的标量目标
        array: 被扰动的数组（会被临时修改）
        step: 差分步长
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + step
        plus = objective()
        array[index] = original - step
        minus = objective()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(
    build: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    step: float = 1e-6,
    seed: int = 0,
) -> float:
    """
    校验 build(*inputs) 对每个输入的梯度。

    输出先与固定的随机权重做内积得到标量，再比较解析梯度与中心差分。

    参数：
        build: 由输入张量构造输出张量的函数
        arrays: 各输入的初始数值
        step: 差分步长
        seed: 随机投影权重的种子

    返回：
        所有输入拼接后的相对误差
    """
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*inputs)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    backward(reduce_sum(mul(out, Tensor(weights))))
    analytic = np.concatenate([np.ravel(t.grad) for t in inputs])

    def _objective() -> float:
        with no_grad():
            return float(np.sum(build(*inputs).data * weights))

    numeric = np.concatenate([np.ravel(numeric_gradient(_objective, t.data, step)) for t in inputs])
    return relative_error(analytic, numeric)
