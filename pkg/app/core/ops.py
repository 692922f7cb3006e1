"""
可求导算子集合。

每个算子只读输入、产出新张量，并附带解析形式的局部反向函数。
除标量缩放外不做任何隐式广播，形状不符一律抛 ShapeError。
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from app.core.tensor import Tensor
from app.errors import ConfigError, EmptySequenceError, ShapeError, VocabIndexError

# log 的下界，避免 log(0)
_TINY = 1e-300


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} 形状不一致: {a.shape} 与 {b.shape}")


# ── 线性代数 ────────────────────────────────────────────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """矩阵乘法，支持 1D/2D 组合；dA = dC·Bᵀ，dB = Aᵀ·dC。"""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul 只支持 1D/2D: {a.shape} × {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul 内维不一致: {a.shape} × {b.shape}")
    a_data, b_data = a.data, b.data

    def _backward(g: np.ndarray):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b_data.T, a_data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b_data @ g, np.outer(a_data, g)
        if a.ndim == 2:
            return np.outer(g, b_data), a_data.T @ g
        return g * b_data, g * a_data

    return Tensor.from_op(a_data @ b_data, (a, b), _backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose 需要 2D 张量，实际 {x.shape}")
    return Tensor.from_op(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def outer(a: Tensor, b: Tensor) -> Tensor:
    """外积 a bᵀ，a 与 b 均为 1D。"""
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"outer 需要两个 1D 张量: {a.shape}, {b.shape}")
    a_data, b_data = a.data, b.data
    return Tensor.from_op(
        np.outer(a_data, b_data),
        (a, b),
        lambda g: (g @ b_data, g.T @ a_data),
        "outer",
    )


# ── 逐元素 ──────────────────────────────────────────────────

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    a_data, b_data = a.data, b.data
    return Tensor.from_op(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    """标量乘张量，唯一允许的广播形式。"""
    factor = float(factor)
    return Tensor.from_op(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log(x: Tensor) -> Tensor:
    safe = np.maximum(x.data, _TINY)
    return Tensor.from_op(np.log(safe), (x,), lambda g: (g / safe,), "log")


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor.from_op(
        np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum"
    )


# ── 形状变换 ────────────────────────────────────────────────

def concat_many(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """沿 axis 拼接多个张量，反向时按原尺寸切回。"""
    if not tensors:
        raise EmptySequenceError("concat 至少需要一个张量")
    first = tensors[0]
    if not -first.ndim <= axis < max(first.ndim, 1):
        raise ShapeError(f"concat 轴 {axis} 超出维度 {first.shape}")
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[d] != first.shape[d] for d in range(first.ndim) if d != axis
        ):
            raise ShapeError(f"concat 形状不一致: {first.shape} 与 {t.shape} (axis={axis})")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def _backward(g: np.ndarray):
        return [part.copy() for part in np.split(g, cuts, axis=axis)]

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(data, tuple(tensors), _backward, "concat")


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    return concat_many((a, b), axis=axis)


def narrow(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """取 axis 上 [start, stop) 的切片。"""
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"narrow 区间 [{start}, {stop}) 超出形状 {x.shape} (axis={axis})")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return Tensor.from_op(x.data[index].copy(), (x,), _backward, "narrow")


def select_row(x: Tensor, row: int) -> Tensor:
    """取 2D 张量的第 row 行，得到 1D 张量。"""
    if x.ndim != 2 or not 0 <= row < x.shape[0]:
        raise ShapeError(f"select_row 行号 {row} 不适用于形状 {x.shape}")
    shape = x.shape

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        full[row] = g
        return (full,)

    return Tensor.from_op(x.data[row].copy(), (x,), _backward, "select_row")


def stack(rows: Sequence[Tensor]) -> Tensor:
    """把同形状的 1D 张量堆叠为 2D 矩阵。"""
    if not rows:
        raise EmptySequenceError("stack 需要至少一行")
    for r in rows:
        if r.ndim != 1 or r.shape != rows[0].shape:
            raise ShapeError(f"stack 需要同形状 1D 张量: {rows[0].shape} 与 {r.shape}")
    return Tensor.from_op(
        np.stack([r.data for r in rows]),
        tuple(rows),
        lambda g: [g[i].copy() for i in range(g.shape[0])],
        "stack",
    )


# ── 归一化与池化 ────────────────────────────────────────────

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """数值稳定的 softmax（先减最大值）。"""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), _backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """逐行归一化到零均值、单位方差（总体方差，eps 位于根号内），再乘 gain 加 bias。"""
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"layer_norm 需要 n×d 张量 (d ≥ 1)，实际 {x.shape}")
    width = x.shape[1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm 参数形状 {gain.shape}/{bias.shape} 与宽度 {width} 不符")
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    normed = centered * inv_std
    gain_data = gain.data

    def _backward(g: np.ndarray):
        d_normed = g * gain_data
        dx = inv_std * (
            d_normed
            - d_normed.mean(axis=1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=1, keepdims=True)
        )
        return dx, (g * normed).sum(axis=0), g.sum(axis=0)

    return Tensor.from_op(normed * gain_data + bias.data, (x, gain, bias), _backward, "layer_norm")


def average_pool(h: Tensor) -> Tensor:
    """按列求算术平均：n×d → d。"""
    if h.ndim != 2:
        raise ShapeError(f"average_pool 需要 n×d 张量，实际 {h.shape}")
    rows = h.shape[0]
    if rows == 0:
        raise EmptySequenceError("average_pool 不能作用于空序列")
    shape = h.shape
    return Tensor.from_op(
        h.data.mean(axis=0),
        (h,),
        lambda g: (np.broadcast_to(g / rows, shape).copy(),),
        "average_pool",
    )


# ── 随机与查表 ──────────────────────────────────────────────

def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """倒置 dropout：训练时按 rate 置零并把存活元素放大 1/(1-rate)，评估时恒等。"""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout 比例必须在 [0, 1) 内，实际 {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("训练模式下的 dropout 需要随机数生成器")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """按 id 取嵌入行；反向时对重复 id 做 scatter-add。"""
    if table.ndim != 2:
        raise ShapeError(f"嵌入表必须是 V×e，实际 {table.shape}")
    vocab_size, dim = table.shape
    for token_id in ids:
        if not 0 <= token_id < vocab_size:
            raise VocabIndexError(f"词 id {token_id} 超出词表大小 {vocab_size}", index=token_id)
    index = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    rows = table.data[index] if len(index) else np.zeros((0, dim))
    return Tensor.from_op(rows, (table,), _backward, "embedding")


# ── 损失 ────────────────────────────────────────────────────

def cross_entropy(p: Tensor, target: int) -> Tensor:
    """对概率向量 p 取 −log p[target]（target 为 0 起的类别下标）。"""
    if p.ndim != 1:
        raise ShapeError(f"cross_entropy 需要 1D 概率向量，实际 {p.shape}")
    if not 0 <= target < p.shape[0]:
        raise VocabIndexError(f"类别下标 {target} 超出范围 [0, {p.shape[0]})", index=target)
    shape = p.shape
    picked = max(float(p.data[target]), _TINY)

    def _backward(g: np.ndarray):
        full = np.zeros(shape)
        full[target] = -float(g) / picked
        return (full,)

    return Tensor.from_op(np.asarray(-np.log(picked)), (p,), _backward, "cross_entropy")


# ── 循环核 ──────────────────────────────────────────────────

def lstm_scan(
    x: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    reverse: bool = False,
) -> Tensor:
    """
    单向 LSTM 整序列前向，作为一个算子记录，反向走 BPTT。

    门的列块顺序为 i, f, o, g；初始隐状态与细胞状态为零。

    参数：
        x: 输入序列 n×d_in
        w_ih: d_in×4h
        w_hh: h×4h
        bias: 4h
        reverse: 为真时从序列末尾向前处理，输出第 t 行仍对应第 t 个词

    返回：
        隐状态矩阵 n×h
    """
    if x.ndim != 2:
        raise ShapeError(f"lstm_scan 需要 n×d_in 输入，实际 {x.shape}")
    steps = x.shape[0]
    if steps == 0:
        raise EmptySequenceError("LSTM 不能编码空序列")
    hidden = w_hh.shape[0]
    if w_ih.shape != (x.shape[1], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ShapeError(
            f"LSTM 参数形状不符: x={x.shape}, w_ih={w_ih.shape}, w_hh={w_hh.shape}, bias={bias.shape}"
        )

    w_ih_data, w_hh_data = w_ih.data, w_hh.data
    inputs = x.data[::-1] if reverse else x.data
    gate_inputs = inputs @ w_ih_data + bias.data

    acts = np.empty((steps, 4 * hidden))
    tanh_cells = np.empty((steps, hidden))
    prev_hidden = np.zeros((steps, hidden))
    prev_cells = np.zeros((steps, hidden))
    hiddens = np.empty((steps, hidden))

    h_prev = np.zeros(hidden)
    c_prev = np.zeros(hidden)
    for t in range(steps):
        z = gate_inputs[t] + h_prev @ w_hh_data
        a = acts[t]
        a[: 3 * hidden] = _sigmoid(z[: 3 * hidden])
        a[3 * hidden:] = np.tanh(z[3 * hidden:])
        i, f, o, g = a[:hidden], a[hidden: 2 * hidden], a[2 * hidden: 3 * hidden], a[3 * hidden:]
        c = f * c_prev + i * g
        tanh_cells[t] = np.tanh(c)
        prev_hidden[t] = h_prev
        prev_cells[t] = c_prev
        hiddens[t] = o * tanh_cells[t]
        h_prev, c_prev = hiddens[t], c

    def _backward(grad_out: np.ndarray):
        grad_seq = grad_out[::-1] if reverse else grad_out
        dz = np.empty((steps, 4 * hidden))
        dh_next = np.zeros(hidden)
        dc_next = np.zeros(hidden)
        for t in reversed(range(steps)):
            a = acts[t]
            i, f, o, g = a[:hidden], a[hidden: 2 * hidden], a[2 * hidden: 3 * hidden], a[3 * hidden:]
            tc = tanh_cells[t]
            dh = grad_seq[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[t, :hidden] = dc * g * i * (1.0 - i)
            dz[t, hidden: 2 * hidden] = dc * prev_cells[t] * f * (1.0 - f)
            dz[t, 2 * hidden: 3 * hidden] = dh * tc * o * (1.0 - o)
            dz[t, 3 * hidden:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = w_hh_data @ dz[t]
        d_inputs = dz @ w_ih_data.T
        dx = d_inputs[::-1].copy() if reverse else d_inputs
        return dx, inputs.T @ dz, prev_hidden.T @ dz, dz.sum(axis=0)

    out = hiddens[::-1].copy() if reverse else hiddens
    return Tensor.from_op(out, (x, w_ih, w_hh, bias), _backward, "lstm_scan")
