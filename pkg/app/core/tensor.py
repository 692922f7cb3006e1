"""稠密张量与计算带：记录前向运算，按逆拓扑序回放完成反向传播。"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from app.errors import RevSumError, ShapeError

# 每个逻辑线程/协程独立的求导开关
_GRAD_ENABLED: ContextVar[bool] = ContextVar("revsum_grad_enabled", default=True)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    float64 稠密张量。

    data 为行主序 numpy 数组；requires_grad 为真时，反向传播会把梯度累加进 grad。
    由运算产生的张量额外记录父节点与局部反向函数。
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        """
        创建叶子张量（会复制输入数据）。

        参数：
            values: 标量、嵌套列表或 numpy 数组
            requires_grad: 是否需要梯度
        """
        self.data = np.array(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """由算子调用：包装前向结果，并在需要时挂上反向函数。"""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        tracked = _GRAD_ENABLED.get() and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        out._parents = tuple(parents) if tracked else ()
        out._backward = backward if tracked else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() 需要单元素张量，实际形状 {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # 运算符只覆盖同形状运算与标量缩放，不做隐式广播
    def __add__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.sub(self, other)

    def __mul__(self, other) -> "Tensor":
        from app.core import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from app.core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from app.core import ops
        return ops.matmul(self, other)


class ComputationTape:
    """从标量损失出发记录所有可达的求导节点，顺序保证父节点先于子节点。"""

    def __init__(self, root: Tensor):
        self.root = root
        self.entries: list[Tensor] = self._record(root)

    @staticmethod
    def _record(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self) -> None:
        """逆序回放：每个节点的上游梯度汇总完成后，才向父节点传播一次。"""
        pending: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.entries):
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            node.grad = upstream.copy() if node.grad is None else node.grad + upstream
            if node._backward is None:
                continue
            for parent, grad in zip(node._parents, node._backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.shape:
                    raise ShapeError(
                        f"{node.op} 反向梯度形状 {grad.shape} 与输入形状 {parent.shape} 不一致"
                    )
                key = id(parent)
                pending[key] = pending[key] + grad if key in pending else grad


def backward(loss: Tensor) -> None:
    """
    对标量损失做反向传播，梯度累加进所有可达且 requires_grad 的张量。

    参数：
        loss: 由被跟踪的运算得到的标量张量
    """
    if loss.size != 1:
        raise ShapeError(f"backward 需要标量损失，实际形状 {loss.shape}")
    if not loss.requires_grad:
        raise RevSumError("损失不依赖任何需要梯度的张量，无法反向传播")
    ComputationTape(loss).backward()


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """在当前上下文中关闭计算图记录（评估、数值差分时使用）。"""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)
