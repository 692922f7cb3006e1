"""
语料服务：分词、样本、词表、语料读写与预训练词向量加载。
"""

import json
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.errors import DataError, FormatError
from app.schemas.data import CorpusRecord

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """
    小写、按空白切分，并把词首尾的 ASCII 标点各自拆成单字符 token。

    "Great buy!" → ["great", "buy", "!"]
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in _PUNCT:
            start += 1
        while end > start and chunk[end - 1] in _PUNCT:
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


@dataclass(frozen=True)
class Example:
    """一条样本：评论 token、摘要 token、1-5 评分。"""

    review: tuple[str, ...]
    summary: tuple[str, ...]
    rating: int

    def __post_init__(self):
        if not 1 <= self.rating <= 5:
            raise DataError(f"评分必须在 1-5 之间，实际 {self.rating}")
        if not self.review:
            raise DataError("评论不能为空")

    @classmethod
    def from_text(cls, review: str, summary: str, rating: int) -> "Example":
        return cls(tuple(tokenize(review)), tuple(tokenize(summary)), rating)


class Vocabulary:
    """token ↔ id 双向映射；id 0、1 固定为 PAD、UNK。"""

    def __init__(self, tokens: Sequence[str]):
        """
        参数：
            tokens: 按 id 顺序排列的全部 token（前两个必须是 PAD、UNK）
        """
        if list(tokens[:2]) != [PAD, UNK]:
            raise DataError("词表前两个 token 必须是 <pad>、<unk>")
        self._itos = list(tokens)
        self._stoi = {token: i for i, token in enumerate(self._itos)}
        if len(self._stoi) != len(self._itos):
            raise DataError("词表中存在重复 token")

    @classmethod
    def build(cls, corpus: Iterable[Example], min_freq: int = 2) -> "Vocabulary":
        """
        统计评论与摘要的词频，保留频次 ≥ min_freq 的 token。

        按 (频次降序, token 字典序) 排列，同一语料与阈值下 id 稳定。
        """
        counts: Counter[str] = Counter()
        for example in corpus:
            counts.update(example.review)
            counts.update(example.summary)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in (PAD, UNK)), key=lambda t: (-counts[t], t))
        vocab = cls([PAD, UNK, *kept])
        logger.info(f"词表构建完成 size={len(vocab)} min_freq={min_freq} 丢弃={len(counts) - len(kept)}")
        return vocab

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id_of(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token_of(self, index: int) -> str:
        return self._itos[index]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._stoi.get(t, UNK_ID) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self._itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        try:
            tokens = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"词表文件不是合法 JSON: {path}: {e}") from e
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DataError(f"词表文件必须是字符串列表: {path}")
        return cls(tokens)


class EncodedExample(NamedTuple):
    """已映射为 id 并截断的样本，直接喂给模型。"""

    review: list[int]
    summary: list[int]
    rating: int
    review_tokens: tuple[str, ...]
    summary_tokens: tuple[str, ...]


def encode_example(example: Example, vocab: Vocabulary, max_review_len: int = 400, max_summary_len: int = 30) -> EncodedExample:
    """按词表映射并截断评论（默认 400）与摘要（默认 30）。"""
    review = example.review[:max_review_len]
    summary = example.summary[:max_summary_len]
    return EncodedExample(vocab.encode(review), vocab.encode(summary), example.rating, review, summary)


def load_corpus(path: Path) -> list[Example]:
    """
    读取 JSON Lines 语料，每行 {"review", "summary", "rating"}。

    空行跳过；任何不合法的行抛出带行号的 DataError。

    参数：
        path: 语料文件路径

    返回：
        按文件顺序排列的样本列表
    """
    if not path.exists():
        raise DataError(f"语料文件不存在: {path}")
    corpus: list[Example] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = CorpusRecord.model_validate_json(line)
            except ValidationError as e:
                raise DataError(f"记录不合法: {e.errors()[0]['msg']} ({e.errors()[0]['loc']})", line=line_no) from e
            example_tokens = tokenize(record.review)
            if not example_tokens:
                raise DataError("评论分词后为空", line=line_no)
            corpus.append(Example(tuple(example_tokens), tuple(tokenize(record.summary)), record.rating))
    logger.info(f"语料加载完成 path={path} size={len(corpus)}")
    return corpus


def write_corpus(path: Path, corpus: Iterable[Example]) -> int:
    """把样本写成 JSON Lines（token 以空格连接），返回写入条数。"""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for example in corpus:
            record = CorpusRecord(review=" ".join(example.review), summary=" ".join(example.summary), rating=example.rating)
            f.write(record.model_dump_json() + "\n")
            count += 1
    return count


def split_corpus(corpus: Sequence[Example], dev_fraction: float, test_fraction: float) -> tuple[list[Example], list[Example], list[Example]]:
    """按顺序切分 train / dev / test（合成语料本身已随机，不再打乱）。"""
    n = len(corpus)
    n_test = int(round(n * test_fraction))
    n_dev = int(round(n * dev_fraction))
    n_train = n - n_dev - n_test
    if n_train < 0:
        raise DataError(f"切分比例之和超过 1: dev={dev_fraction}, test={test_fraction}")
    return list(corpus[:n_train]), list(corpus[n_train:n_train + n_dev]), list(corpus[n_train + n_dev:])


@dataclass
class EmbeddingTable:
    """与词表对齐的 V×e 嵌入矩阵，matched 为从文件命中的非保留 token 数。"""

    vectors: np.ndarray
    matched: int

    @property
    def match_rate(self) -> float:
        candidates = self.vectors.shape[0] - 2
        return self.matched / candidates if candidates > 0 else 0.0


def load_embeddings(path: Path, vocab: Vocabulary, dim: Optional[int] = None, seed: int = 13) -> EmbeddingTable:
    """
    读取 GloVe 文本格式词向量（每行 token 后跟 e 个浮点数）。

    所有行先按种子取 U(−0.1, 0.1)，再用文件中命中词表的向量覆盖；PAD 行置零。

    参数：
        path: 词向量文件
        vocab: 词表
        dim: 期望维度；为 None 时取文件第一行的维度
        seed: 未命中行的随机种子

    返回：
        EmbeddingTable
    """
    if not path.exists():
        raise FormatError(f"词向量文件不存在: {path}")
    rows: dict[int, np.ndarray] = {}
    width = dim
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if width is None:
                width = len(values)
            if len(values) != width:
                raise FormatError(f"向量维度 {len(values)} 与期望 {width} 不一致", line=line_no)
            try:
                vector = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise FormatError(f"无法解析浮点数: {e}", line=line_no) from e
            if token in vocab and vocab.id_of(token) > UNK_ID:
                rows[vocab.id_of(token)] = vector
    if width is None:
        raise FormatError(f"词向量文件为空且未指定维度: {path}")
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.1, 0.1, size=(len(vocab), width))
    vectors[PAD_ID] = 0.0
    for index, vector in rows.items():
        vectors[index] = vector
    table = EmbeddingTable(vectors, len(rows))
    if not rows:
        logger.warning(f"词向量文件没有命中任何词表 token: {path}")
    logger.info(f"词向量加载完成 dim={width} matched={table.matched} rate={table.match_rate:.3f}")
    return table
