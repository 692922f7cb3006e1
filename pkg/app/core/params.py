"""具名参数集合：按固定顺序从同一个随机源初始化，保证同种子逐位一致。"""

from typing import Iterator, Mapping, Optional

import numpy as np

from app.core.tensor import Tensor
from app.errors import ConfigError, ShapeError


class ParameterSet:
    """模型全部参数的登记处，名称即检查点里的键。"""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, values: np.ndarray, requires_grad: bool) -> Tensor:
        if name in self._params:
            raise ConfigError(f"参数名重复: {name}")
        tensor = Tensor(values, requires_grad=requires_grad)
        self._params[name] = tensor
        return tensor

    def uniform(self, name: str, shape: tuple[int, ...], bound: float, requires_grad: bool = True) -> Tensor:
        """U(−bound, bound) 初始化。"""
        return self._register(name, self._rng.uniform(-bound, bound, size=shape), requires_grad)

    def constant(self, name: str, values: np.ndarray, requires_grad: bool = True) -> Tensor:
        return self._register(name, np.asarray(values, dtype=np.float64), requires_grad)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.constant(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.constant(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self) -> dict[str, Tensor]:
        return {name: p for name, p in self._params.items() if p.requires_grad}

    def count(self, trainable_only: bool = False) -> int:
        """标量参数总数。"""
        return sum(p.size for p in self._params.values() if p.requires_grad or not trainable_only)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """所有参数数值的快照（副本）。"""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """
        用快照覆盖参数数值。

        参数：
            state: 名称到数组的映射
            strict: 为真时要求名称集合完全一致
        """
        missing: Optional[set[str]] = set(self._params) - set(state) if strict else None
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ConfigError(f"参数名不匹配: 缺少 {sorted(missing or [])}，多余 {sorted(unexpected)}")
        for name, values in state.items():
            target = self._params[name]
            if values.shape != target.shape:
                raise ShapeError(f"参数 {name} 形状 {values.shape} 与模型 {target.shape} 不符")
            target.data = np.array(values, dtype=np.float64)
            target.grad = None
