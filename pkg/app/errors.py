"""异常定义：所有可预期的失败都归入 RevSumError 体系，同时继承最贴近的内置异常。"""

from typing import Optional


class RevSumError(Exception):
    """本项目所有可预期错误的基类。"""


class ShapeError(RevSumError, ValueError):
    """张量形状不匹配。"""


class EmptySequenceError(RevSumError, ValueError):
    """对空序列做池化、编码或前向计算。"""


class ConfigError(RevSumError, ValueError):
    """配置项非法（dropout 比例、头数整除、词表为空等）。"""


class DataError(RevSumError, ValueError):
    """语料或预测记录有问题，line 为出错的行号（从 1 开始）。"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message)


class FormatError(DataError):
    """词向量文件格式错误。"""


class VocabIndexError(RevSumError, IndexError):
    """词表 id 或类别下标越界。"""

    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(message)
