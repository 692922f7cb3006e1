"""序列编码服务：标准 LSTM 单元与双向 LSTM 编码器。"""

import math
from dataclasses import dataclass

import numpy as np

from app.core import ops
from app.core.params import ParameterSet
from app.core.tensor import Tensor
from app.errors import EmptySequenceError, ShapeError


@dataclass
class LstmParams:
    """单向 LSTM 参数。权重按 (输入维, 4·隐层) 存放，列块顺序 i, f, o, g。"""

    w_ih: Tensor
    w_hh: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[0]

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, input_size: int, hidden_size: int) -> "LstmParams":
        """
        登记一组 LSTM 参数。

        权重取 U(−1/√d_h, 1/√d_h)，遗忘门偏置为 1，其余偏置为 0。

        参数：
            params: 参数集合
            prefix: 参数名前缀
            input_size: 输入维度
            hidden_size: 隐层维度 d_h
        """
        bound = 1.0 / math.sqrt(hidden_size)
        w_ih = params.uniform(f"{prefix}.w_ih", (input_size, 4 * hidden_size), bound)
        w_hh = params.uniform(f"{prefix}.w_hh", (hidden_size, 4 * hidden_size), bound)
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size: 2 * hidden_size] = 1.0
        return cls(w_ih, w_hh, params.constant(f"{prefix}.bias", bias))


@dataclass
class BiLstmEncoder:
    """前向 + 后向两个 LSTM，逐词拼接两个方向的隐状态。"""

    forward: LstmParams
    backward: LstmParams

    @property
    def hidden_size(self) -> int:
        return self.forward.hidden_size

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    @classmethod
    def create(cls, params: ParameterSet, prefix: str, input_size: int, hidden_size: int) -> "BiLstmEncoder":
        return cls(
            forward=LstmParams.create(params, f"{prefix}.forward", input_size, hidden_size),
            backward=LstmParams.create(params, f"{prefix}.backward", input_size, hidden_size),
        )


def lstm_step(params: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """
    LSTM 单步：i,f,o = σ(仿射)，g = tanh(仿射)，c = f⊙c_prev + i⊙g，h = o⊙tanh(c)。

    参数：
        params: LSTM 参数
        x_t: 当前输入 (d_in,)
        h_prev: 上一隐状态 (d_h,)
        c_prev: 上一细胞状态 (d_h,)

    返回：
        (h_t, c_t)
    """
    hidden = params.hidden_size
    if x_t.shape != (params.input_size,) or h_prev.shape != (hidden,) or c_prev.shape != (hidden,):
        raise ShapeError(
            f"lstm_step 维度不符: x={x_t.shape}, h={h_prev.shape}, c={c_prev.shape}, "
            f"期望 d_in={params.input_size}, d_h={hidden}"
        )
    z = ops.add(ops.add(ops.matmul(x_t, params.w_ih), ops.matmul(h_prev, params.w_hh)), params.bias)
    i = ops.sigmoid(ops.narrow(z, 0, hidden))
    f = ops.sigmoid(ops.narrow(z, hidden, 2 * hidden))
    o = ops.sigmoid(ops.narrow(z, 2 * hidden, 3 * hidden))
    g = ops.tanh(ops.narrow(z, 3 * hidden, 4 * hidden))
    c_t = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
    h_t = ops.mul(o, ops.tanh(c_t))
    return h_t, c_t


def encode_sequence(encoder: BiLstmEncoder, x: Tensor) -> Tensor:
    """
    双向编码：第 t 行为 [前向第 t 步隐状态 ; 后向第 t 步隐状态]，两端初始状态为零。

    参数：
        encoder: 双向编码器
        x: 输入序列 n×d_in

    返回：
        n×2d_h 隐状态矩阵 H
    """
    if x.ndim != 2:
        raise ShapeError(f"encode_sequence 需要 n×d_in 输入，实际 {x.shape}")
    if x.shape[0] == 0:
        raise EmptySequenceError("无法编码空序列")
    fw = encoder.forward
    bw = encoder.backward
    forward_states = ops.lstm_scan(x, fw.w_ih, fw.w_hh, fw.bias)
    backward_states = ops.lstm_scan(x, bw.w_ih, bw.w_hh, bw.bias, reverse=True)
    return ops.concat(forward_states, backward_states, axis=1)
