"""命令行入口：train / eval / predict / analyze / visualize / gen-data / gradcheck / experiment。"""

import json
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Optional, Sequence

from loguru import logger

from app.config import settings
from app.core.tensor import no_grad
from app.errors import DataError, RevSumError
from app.models.store import load_model
from app.models.variant import ModelVariant
from app.models.zoo import rating_from_probs
from app.schemas.data import SyntheticSpec, load_synthetic_spec
from app.schemas.run import ModelConfig, TrainConfig, load_run_config
from app.services.analysis import (
    DEFAULT_BUCKET_EDGES,
    conflicting_set,
    length_buckets,
    load_predictions,
    prediction_records,
    write_predictions,
)
from app.services.corpus import EncodedExample, Vocabulary, load_corpus, split_corpus, tokenize, write_corpus
from app.services.experiments import DEFAULT_VARIANTS, ComplementarityExperiment
from app.services.gradcheck_suite import check_ops, run_suite
from app.services.heatmap import export_heatmap
from app.services.pipeline import TrainingRun, encode_corpus
from app.services.synthetic import gen_synthetic
from app.services.trainer import evaluate

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _emit(payload: dict) -> None:
    """结果以一行 JSON 写到标准输出。"""
    sys.stdout.write(json.dumps(payload, ensure_ascii=False) + "\n")
    sys.stdout.flush()


def _parse_edges(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


# ── train ──────────────────────────────────────────────────

def train_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("train", help="训练一个模型变体")
    parser.set_defaults(func=run_train)
    parser.add_argument("--config", type=Path, required=True, help="key=value 或 JSON 运行配置")
    parser.add_argument("--corpus", type=Path, required=True, help="训练语料 (JSON Lines)")
    parser.add_argument("--dev", type=Path, help="验证语料；缺省时从训练语料切出 10%%")
    parser.add_argument("--embeddings", type=Path, help="GloVe 文本格式词向量")
    parser.add_argument("--out", type=Path, help="检查点目录，默认 <数据根目录>/runs/<变体>")
    parser.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    return parser


def run_train(args: Namespace) -> int:
    model_config, train_config = load_run_config(args.config)
    if args.seed is not None:
        train_config = train_config.model_copy(update={"seed": args.seed})
    summary = TrainingRun(
        model_config,
        train_config,
        args.corpus,
        args.out or settings.runs_path / model_config.variant.value,
        dev_path=args.dev,
        embeddings_path=args.embeddings,
    ).run()
    _emit({
        "checkpoint": str(summary.checkpoint),
        "history": str(summary.history_path),
        "best_dev_accuracy": summary.best_dev_accuracy,
        "epochs": summary.epochs,
    })
    return EXIT_OK


# ── eval ───────────────────────────────────────────────────

def eval_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("eval", help="在语料上评估检查点")
    parser.set_defaults(func=run_eval)
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--corpus", type=Path, required=True)
    parser.add_argument("--out", type=Path, help="预测记录输出 (JSON Lines)")
    parser.add_argument("--workers", type=int, help="并行前向线程数")
    parser.add_argument("--tag", help="写入预测记录的模型标签，默认取变体名")
    return parser


def run_eval(args: Namespace) -> int:
    model, vocab = load_model(args.checkpoint)
    corpus = encode_corpus(load_corpus(args.corpus), vocab)
    result = evaluate(model, corpus, args.workers or settings.eval_workers)
    tag = args.tag or model.variant.value
    payload = {"model": tag, "accuracy": result.accuracy, "count": len(corpus)}
    if args.out:
        records = prediction_records(result.predictions, [e.rating for e in corpus], tag)
        write_predictions(args.out, records)
        payload["predictions"] = str(args.out)
    _emit(payload)
    return EXIT_OK


# ── predict ────────────────────────────────────────────────

def predict_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("predict", help="从标准输入读一条记录并预测评分")
    parser.set_defaults(func=run_predict)
    parser.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _encode_record(record: object, vocab: Vocabulary, line: int) -> EncodedExample:
    """把 {"review", "summary"[, "rating"]} 记录编码为模型输入；rating 缺省记为 0。"""
    if not isinstance(record, dict) or not isinstance(record.get("review"), str):
        raise DataError("记录缺少字符串字段 review", line=line)
    review = tuple(tokenize(record["review"]))[: settings.max_review_len]
    summary = tuple(tokenize(str(record.get("summary") or "")))[: settings.max_summary_len]
    if not review:
        raise DataError("评论分词后为空", line=line)
    try:
        rating = int(record.get("rating") or 0)
    except (TypeError, ValueError) as e:
        raise DataError(f"rating 不是整数: {record.get('rating')!r}", line=line) from e
    return EncodedExample(vocab.encode(review), vocab.encode(summary), rating, review, summary)


def _read_stdin_record(vocab: Vocabulary) -> EncodedExample:
    raw = sys.stdin.read().strip()
    if not raw:
        raise DataError("标准输入为空，需要一条 {\"review\", \"summary\"} 记录")
    try:
        record = json.loads(raw.splitlines()[0])
    except json.JSONDecodeError as e:
        raise DataError(f"标准输入不是合法 JSON: {e}", line=1) from e
    return _encode_record(record, vocab, 1)


def run_predict(args: Namespace) -> int:
    model, vocab = load_model(args.checkpoint)
    example = _read_stdin_record(vocab)
    with no_grad():
        output = model.forward(example)
    _emit({
        "rating": rating_from_probs(output.probs.data),
        "probs": output.probs.data.tolist(),
        "trace": output.trace.to_dict(),
    })
    return EXIT_OK


# ── analyze ────────────────────────────────────────────────

def analyze_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("analyze", help="冲突集划分与评论长度分桶")
    parser.set_defaults(func=run_analyze)
    parser.add_argument("--review", type=Path, required=True, help="仅评论模型的预测记录")
    parser.add_argument("--summary", type=Path, required=True, help="仅摘要模型的预测记录")
    parser.add_argument("--model", type=Path, action="append", default=[], help="其他模型的预测记录，可重复")
    parser.add_argument("--corpus", type=Path, help="金标语料；提供时按评论长度分桶")
    parser.add_argument("--edges", type=_parse_edges, default=list(DEFAULT_BUCKET_EDGES), help="分桶边界，如 50,100,150")
    return parser


def run_analyze(args: Namespace) -> int:
    preds_review = load_predictions(args.review)
    preds_summary = load_predictions(args.summary)
    others = [load_predictions(path) for path in args.model]
    decomposition = conflicting_set(preds_review, preds_summary, others)
    payload: dict = {
        "conflicting_fraction": decomposition.conflicting_fraction,
        "decomposition": decomposition.model_dump(by_alias=True),
    }
    if args.corpus:
        corpus = load_corpus(args.corpus)
        lengths = [len(example.review) for example in corpus]
        mismatched = [
            r.example_id for r in preds_review
            if 0 <= r.example_id < len(corpus) and corpus[r.example_id].rating != r.gold
        ]
        if mismatched:
            raise DataError(f"样本 {mismatched[0]} 的金标与语料不一致")
        payload["length_buckets"] = {
            decomposition.accuracies[k].tag: [b.to_dict() for b in length_buckets(records, lengths, args.edges)]
            for k, records in enumerate([preds_review, preds_summary, *others])
        }
    _emit(payload)
    return EXIT_OK


# ── visualize ──────────────────────────────────────────────

def visualize_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("visualize", help="导出一条样本的注意力热力图")
    parser.set_defaults(func=run_visualize)
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--corpus", type=Path, help="从语料中取样本；缺省时从标准输入读一条记录")
    parser.add_argument("--index", type=int, default=0, help="语料中的样本下标")
    parser.add_argument("--out", type=Path, required=True, help="HTML 输出路径，附表写到同名 .json")
    parser.add_argument("--source", choices=["review", "summary", "joint"], help="注意力所在文本，默认优先评论")
    parser.add_argument("--threshold", type=float, help="高亮阈值，默认取配置")
    return parser


def run_visualize(args: Namespace) -> int:
    model, vocab = load_model(args.checkpoint)
    if args.corpus:
        corpus = load_corpus(args.corpus)
        if not 0 <= args.index < len(corpus):
            raise DataError(f"样本下标 {args.index} 超出语料大小 {len(corpus)}")
        example = encode_corpus([corpus[args.index]], vocab)[0]
    else:
        example = _read_stdin_record(vocab)
    with no_grad():
        output = model.forward(example)
    sources = output.trace.sources()
    if not sources:
        raise DataError(f"变体 {model.variant.value} 不产生注意力分布")
    source = args.source or ("review" if "review" in sources else sources[0])
    tokens = {
        "review": list(example.review_tokens),
        "summary": list(example.summary_tokens),
        "joint": list(example.review_tokens) + list(example.summary_tokens),
    }[source]
    threshold = settings.heatmap_threshold if args.threshold is None else args.threshold
    path = export_heatmap(output.trace, tokens, args.out, threshold, source)
    _emit({
        "html": str(path),
        "sidecar": str(path.with_suffix(".json")),
        "source": source,
        "rating": rating_from_probs(output.probs.data),
    })
    return EXIT_OK


# ── gen-data ───────────────────────────────────────────────

def gen_data_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("gen-data", help="生成合成语料")
    parser.set_defaults(func=run_gen_data)
    parser.add_argument("--config", type=Path, help="SyntheticSpec 文件（JSON 或 key=value），缺省用内置词表")
    parser.add_argument("--count", type=int, required=True)
    parser.add_argument("--out", type=Path, required=True, help="语料文件；配合 --split 时为目录")
    parser.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    parser.add_argument("--split", help="dev,test 比例，如 0.1,0.1；写出 train/dev/test.jsonl")
    return parser


def run_gen_data(args: Namespace) -> int:
    spec = load_synthetic_spec(args.config) if args.config else SyntheticSpec()
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    corpus = gen_synthetic(spec, args.count)
    if args.split:
        try:
            dev_fraction, test_fraction = (float(part) for part in args.split.split(","))
        except ValueError as e:
            raise DataError(f"--split 需要两个比例，如 0.1,0.1: {args.split}") from e
        parts = dict(zip(("train", "dev", "test"), split_corpus(corpus, dev_fraction, test_fraction)))
        written = {name: write_corpus(args.out / f"{name}.jsonl", part) for name, part in parts.items()}
        _emit({"out": str(args.out), "counts": written, "seed": spec.seed})
    else:
        _emit({"out": str(args.out), "count": write_corpus(args.out, corpus), "seed": spec.seed})
    return EXIT_OK


# ── gradcheck ──────────────────────────────────────────────

def gradcheck_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("gradcheck", help="运行有限差分梯度校验")
    parser.set_defaults(func=run_gradcheck)
    parser.add_argument("--ops-only", action="store_true", help="只校验算子")
    parser.add_argument("--variant", action="append", choices=[v.value for v in ModelVariant], help="只抽查这些变体，可重复")
    parser.add_argument("--seed", type=int, help="默认取 REVSUM_SEED")
    return parser


def run_gradcheck(args: Namespace) -> int:
    seed = settings.seed if args.seed is None else args.seed
    if args.ops_only:
        results = check_ops(seed=seed)
    else:
        variants = [ModelVariant(v) for v in args.variant] if args.variant else None
        results = run_suite(variants, seed=seed)
    ops_errors = [r.max_error for r in results if not r.name.startswith("model:")]
    model_errors = [r.max_error for r in results if r.name.startswith("model:")]
    _emit({
        "max_op_error": max(ops_errors) if ops_errors else None,
        "max_model_error": max(model_errors) if model_errors else None,
        "passed": all(r.passed for r in results),
        "results": [r.to_dict() for r in results],
    })
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


# ── experiment ─────────────────────────────────────────────

def experiment_parser(subparsers) -> ArgumentParser:
    parser = subparsers.add_parser("experiment", help="在合成语料上运行互补性实验")
    parser.set_defaults(func=run_experiment)
    parser.add_argument("--config", type=Path, help="SyntheticSpec 文件，缺省用内置词表与 ρ=0.3")
    parser.add_argument("--run-config", type=Path, help="模型与训练超参数（variant 键被忽略）")
    parser.add_argument("--variant", action="append", choices=[v.value for v in ModelVariant], help="参与的变体，可重复")
    parser.add_argument("--seeds", type=_parse_edges, help="逗号分隔的种子，默认取 REVSUM_SEED")
    parser.add_argument("--train-count", type=int, default=5000)
    parser.add_argument("--dev-count", type=int, default=500)
    parser.add_argument("--test-count", type=int, default=1000)
    parser.add_argument("--out", type=Path, help="预测与报告目录，默认 <数据根目录>/runs/experiments")
    return parser


def run_experiment(args: Namespace) -> int:
    spec = load_synthetic_spec(args.config) if args.config else SyntheticSpec()
    model_config, train_config = load_run_config(args.run_config) if args.run_config else (ModelConfig(), TrainConfig())
    variants = [ModelVariant(v) for v in args.variant] if args.variant else list(DEFAULT_VARIANTS)
    out = args.out or settings.runs_path / "experiments"
    report = ComplementarityExperiment(
        spec,
        model_config,
        train_config,
        variants=variants,
        seeds=args.seeds or [settings.seed],
        train_count=args.train_count,
        dev_count=args.dev_count,
        test_count=args.test_count,
        out_dir=out,
    ).run()
    payload = report.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
    _emit({"out": str(out), **{k: v for k, v in payload.items() if k != "decomposition"}})
    return EXIT_OK


# ── main ───────────────────────────────────────────────────

def build_parser() -> ArgumentParser:
    parser = ArgumentParser("revsum", description="评论/摘要双文本情感分类")
    parser.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    subparsers = parser.add_subparsers(dest="command", required=True)
    train_parser(subparsers)
    eval_parser(subparsers)
    predict_parser(subparsers)
    analyze_parser(subparsers)
    visualize_parser(subparsers)
    gen_data_parser(subparsers)
    gradcheck_parser(subparsers)
    experiment_parser(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    解析参数并执行子命令。

    返回：
        0 成功；1 运行期失败（诊断写到标准错误）；2 用法错误
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if args.verbose else settings.log_level)
    try:
        return args.func(args)
    except (RevSumError, OSError) as e:
        logger.error(f"{args.command} 失败: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
