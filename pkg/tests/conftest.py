import json
from pathlib import Path

import pytest

from app.models.variant import ModelVariant
from app.schemas.data import SyntheticSpec
from app.schemas.run import ModelConfig
from app.services.corpus import EncodedExample, Example, Vocabulary, encode_example
from app.services.synthetic import gen_synthetic


def small_config(variant: ModelVariant = ModelVariant.REVIEW_CENTRIC, vocab_size: int = 40, **overrides) -> ModelConfig:
    values = dict(
        variant=variant,
        vocab_size=vocab_size,
        embedding_dim=8,
        hidden_size=4,
        heads=2,
        layers=2,
        dropout=0.0,
        attention_hops=2,
        attention_dim=4,
    )
    values.update(overrides)
    return ModelConfig(**values)


def toy_spec(**overrides) -> SyntheticSpec:
    """信号清晰的小语料：无冲突、无噪声、短文本。"""
    values = dict(
        review_length=(4, 6),
        summary_length=(2, 3),
        conflict_rate=0.0,
        noise_rate=0.0,
        review_signal_tokens=2,
        summary_signal_tokens=1,
        seed=5,
    )
    values.update(overrides)
    return SyntheticSpec(**values)


@pytest.fixture
def toy_corpus() -> list[Example]:
    return gen_synthetic(toy_spec(), 32)


@pytest.fixture
def toy_vocab(toy_corpus) -> Vocabulary:
    return Vocabulary.build(toy_corpus, min_freq=1)


@pytest.fixture
def toy_encoded(toy_corpus, toy_vocab) -> list[EncodedExample]:
    return [encode_example(e, toy_vocab) for e in toy_corpus]


@pytest.fixture
def sample_example() -> EncodedExample:
    review = ("the", "toy", "broke", "fast", "sadly", "really")
    summary = ("broke", "fast")
    ids = {t: i + 2 for i, t in enumerate(dict.fromkeys(review + summary))}
    return EncodedExample([ids[t] for t in review], [ids[t] for t in summary], 2, review, summary)


@pytest.fixture
def corpus_file(tmp_path: Path) -> Path:
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"review": "Great buy! Love it.", "summary": "Great", "rating": 5},
        {"review": "Broke after a day.", "summary": "Junk", "rating": 1},
        {"review": "It is okay, I guess.", "summary": "Fine", "rating": 3},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path
