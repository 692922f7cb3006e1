"""
分析服务：冲突集 / 非冲突集 / 并集划分、各子集准确率，以及按评论长度分桶的准确率。
"""

from bisect import bisect_right
from pathlib import Path
from typing import Iterable, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

from app.errors import ConfigError, DataError
from app.schemas.analysis import BucketAccuracy, PredictionRecord, SetAccuracy, SetDecomposition

DEFAULT_BUCKET_EDGES = (50, 100, 150, 200, 300)


def prediction_records(predictions: Sequence[int], golds: Sequence[int], tag: str) -> list[PredictionRecord]:
    """按位置生成预测记录，id 即样本在语料中的下标。"""
    if len(predictions) != len(golds):
        raise DataError(f"预测数 {len(predictions)} 与金标数 {len(golds)} 不一致")
    return [PredictionRecord(id=i, gold=g, pred=p, model=tag) for i, (p, g) in enumerate(zip(predictions, golds))]


def write_predictions(path: Path, records: Iterable[PredictionRecord]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(record.to_json() + "\n")
            count += 1
    return count


def load_predictions(path: Path) -> list[PredictionRecord]:
    """读取 JSON Lines 预测记录，不合法的行抛出带行号的 DataError。"""
    if not path.exists():
        raise DataError(f"预测文件不存在: {path}")
    records: list[PredictionRecord] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(PredictionRecord.model_validate_json(line))
            except ValidationError as e:
                raise DataError(f"预测记录不合法: {e.errors()[0]['msg']}", line=line_no) from e
    return records


def _accuracy(records: dict[int, PredictionRecord], ids: Sequence[int]) -> Optional[float]:
    if not ids:
        return None
    return sum(1 for i in ids if records[i].correct) / len(ids)


def _index(records: Sequence[PredictionRecord], label: str) -> dict[int, PredictionRecord]:
    indexed = {r.example_id: r for r in records}
    if len(indexed) != len(records):
        raise DataError(f"{label} 预测中存在重复 id")
    return indexed


def conflicting_set(
    preds_review: Sequence[PredictionRecord],
    preds_summary: Sequence[PredictionRecord],
    others: Sequence[Sequence[PredictionRecord]] = (),
) -> SetDecomposition:
    """
    按仅评论模型与仅摘要模型的预测划分测试集。

    冲突集：两者预测不同；并集：冲突集中至少一方预测正确。
    others 中的模型只参与各子集准确率统计。

    参数：
        preds_review: 仅评论模型的预测
        preds_summary: 仅摘要模型的预测
        others: 其他模型的预测（id 集合必须一致）

    返回：
        SetDecomposition，子集里存的是样本 id（按 preds_review 的顺序）
    """
    review = _index(preds_review, "仅评论模型")
    summary = _index(preds_summary, "仅摘要模型")
    ids = [r.example_id for r in preds_review]
    models: list[tuple[str, dict[int, PredictionRecord]]] = [
        (preds_review[0].tag if preds_review and preds_review[0].tag else "review_only", review),
        (preds_summary[0].tag if preds_summary and preds_summary[0].tag else "summary_only", summary),
    ]
    for k, other in enumerate(others):
        tag = other[0].tag if other and other[0].tag else f"model{k + 2}"
        models.append((tag, _index(other, tag)))

    for tag, records in models:
        if set(records) != set(review):
            raise DataError(f"模型 {tag} 的样本 id 集合与仅评论模型不一致")
        for i in ids:
            if records[i].gold != review[i].gold:
                raise DataError(f"样本 {i} 的金标在模型 {tag} 中不一致")

    conflicting = [i for i in ids if review[i].pred != summary[i].pred]
    non_conflicting = [i for i in ids if review[i].pred == summary[i].pred]
    union = [i for i in conflicting if review[i].correct or summary[i].correct]
    union_set = set(union)

    accuracies = []
    for tag, records in models:
        correct_conflicting = [i for i in conflicting if records[i].correct]
        share = (
            sum(1 for i in correct_conflicting if i in union_set) / len(correct_conflicting)
            if correct_conflicting else None
        )
        accuracies.append(SetAccuracy(
            model=tag,
            conflicting=_accuracy(records, conflicting),
            non_conflicting=_accuracy(records, non_conflicting),
            union=_accuracy(records, union),
            overall=_accuracy(records, ids) or 0.0,
            union_share=share,
        ))
    stacked = None
    if conflicting:
        stacked = (accuracies[0].conflicting or 0.0) + (accuracies[1].conflicting or 0.0)
    result = SetDecomposition(
        total=len(ids),
        conflicting=conflicting,
        non_conflicting=non_conflicting,
        union=union,
        accuracies=accuracies,
        stacked_accuracy=stacked,
    )
    logger.info(
        f"冲突集分析完成 total={result.total} 冲突={len(conflicting)} "
        f"({result.conflicting_fraction:.3f}) 并集={len(union)}"
    )
    return result


def length_buckets(
    preds: Sequence[PredictionRecord],
    lengths: Sequence[int],
    edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
) -> list[BucketAccuracy]:
    """
    按评论长度把样本分到左闭右开区间，统计每个区间的准确率。

    edges 为 [e₀, e₁, …] 时区间为 [0, e₀), [e₀, e₁), …, [e_last, ∞)；空区间不出现在结果中。

    参数：
        preds: 预测记录，id 为 lengths 的下标
        lengths: 每条样本的评论 token 数
        edges: 严格递增的区间边界

    返回：
        非空区间的准确率列表（按区间顺序）
    """
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"分桶边界必须严格递增: {list(edges)}")
    bounds = [0, *edges]
    counts = [0] * len(bounds)
    correct = [0] * len(bounds)
    for record in preds:
        if not 0 <= record.example_id < len(lengths):
            raise DataError(f"预测 id {record.example_id} 超出样本数 {len(lengths)}")
        bucket = bisect_right(edges, lengths[record.example_id])
        counts[bucket] += 1
        correct[bucket] += int(record.correct)
    buckets = []
    for k, low in enumerate(bounds):
        if counts[k] == 0:
            continue
        high = edges[k] if k < len(edges) else None
        buckets.append(BucketAccuracy(low=low, high=high, count=counts[k], correct=correct[k]))
    return buckets
