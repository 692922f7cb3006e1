"""
张量二进制存取。

单个张量记录：u32 秩 + 每维一个 u64 + 小端 float64 数值（行主序）。
具名参数文件：若干条 `u32 名字字节长度 + UTF-8 名字 + 张量记录`。
"""

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from app.errors import FormatError

_RANK = struct.Struct("<I")
_DIM = struct.Struct("<Q")
_NAME_LEN = struct.Struct("<I")


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    buf = stream.read(size)
    if len(buf) != size:
        raise FormatError(f"张量数据被截断：期望 {size} 字节，实际 {len(buf)} 字节")
    return buf


def write_tensor(stream: BinaryIO, values: np.ndarray) -> None:
    """把一个数组按张量记录格式写入流。"""
    array = np.asarray(values, dtype="<f8")
    stream.write(_RANK.pack(array.ndim))
    for dim in array.shape:
        stream.write(_DIM.pack(dim))
    stream.write(array.tobytes())


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """从流中读出一个张量记录。"""
    (rank,) = _RANK.unpack(_read_exact(stream, _RANK.size))
    shape = tuple(_DIM.unpack(_read_exact(stream, _DIM.size))[0] for _ in range(rank))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw = _read_exact(stream, count * 8)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_named(path: Path, tensors: Mapping[str, np.ndarray]) -> None:
    """按插入顺序写出具名参数。"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        for name, values in tensors.items():
            encoded = name.encode("utf-8")
            f.write(_NAME_LEN.pack(len(encoded)))
            f.write(encoded)
            write_tensor(f, values)


def load_named(path: Path) -> dict[str, np.ndarray]:
    """读出 save_named 写入的全部参数，保持原顺序。"""
    tensors: dict[str, np.ndarray] = {}
    with path.open("rb") as f:
        while True:
            header = f.read(_NAME_LEN.size)
            if not header:
                break
            if len(header) != _NAME_LEN.size:
                raise FormatError(f"参数文件头被截断: {path}")
            (length,) = _NAME_LEN.unpack(header)
            name = _read_exact(f, length).decode("utf-8")
            tensors[name] = read_tensor(f)
    return tensors
