import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core import ops
from app.errors import ConfigError, DataError, EmptySequenceError, ShapeError
from app.models.store import load_model, save_model
from app.models.variant import ModelVariant
from app.models.zoo import build_model, rating_from_probs
from app.schemas.run import ModelConfig
from app.services.corpus import EncodedExample, Vocabulary
from app.services.encoder import encode_sequence
from tests.conftest import small_config


def _swap(example: EncodedExample) -> EncodedExample:
    return EncodedExample(example.summary, example.review, example.rating, example.summary_tokens, example.review_tokens)


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_every_variant_outputs_a_distribution(variant, sample_example):
    model = build_model(small_config(variant), seed=3)
    output = model.forward(sample_example)
    assert output.probs.shape == (5,)
    assert np.all(output.probs.data > 0)
    assert output.probs.data.sum() == pytest.approx(1.0, abs=1e-12)
    assert output.trace.is_normalized()
    assert 1 <= model.predict(sample_example) <= 5


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_same_seed_gives_identical_parameters(variant):
    first = build_model(small_config(variant), seed=21)
    second = build_model(small_config(variant), seed=21)
    assert list(first.params) == list(second.params)
    for name in first.params:
        assert_array_equal(first.params[name].data, second.params[name].data)
    third = build_model(small_config(variant), seed=22)
    assert not np.array_equal(first.embedding.data, third.embedding.data)


def test_centric_structure_and_trace(sample_example):
    model = build_model(small_config(ModelVariant.REVIEW_CENTRIC, layers=2, heads=2), seed=0)
    assert any(name.startswith("context_encoder.") for name in model.params)
    assert "layers.1.inference.head1.query" in model.params
    assert len(model.modules.layers) == 2
    assert model.modules.layers[1].encoder.forward.input_size == model.config.width
    trace = model.forward(sample_example).trace
    assert trace.names() == ["layer0.inference", "layer1.inference"]
    for record in trace:
        assert record.source == "review"
        assert record.weights.shape == (2, len(sample_example.review))


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        build_model(ModelConfig(variant=ModelVariant.REVIEW_CENTRIC, vocab_size=10, hidden_size=256, heads=3, embedding_dim=4))


def test_vocab_size_too_small():
    with pytest.raises(ConfigError):
        build_model(small_config(vocab_size=1))


def test_mirror_variants_have_equal_parameter_counts():
    pairs = [
        (ModelVariant.REVIEW_ONLY_POOL, ModelVariant.SUMMARY_ONLY_POOL),
        (ModelVariant.REVIEW_ONLY_SELFATTN, ModelVariant.SUMMARY_ONLY_SELFATTN),
        (ModelVariant.JOINT_COATTN_REVIEW, ModelVariant.JOINT_COATTN_SUMMARY),
        (ModelVariant.REVIEW_CENTRIC, ModelVariant.SUMMARY_CENTRIC),
    ]
    for left, right in pairs:
        assert build_model(small_config(left)).params.count() == build_model(small_config(right)).params.count()


def test_summary_centric_mirrors_review_centric(sample_example):
    review_model = build_model(small_config(ModelVariant.REVIEW_CENTRIC), seed=9)
    summary_model = build_model(small_config(ModelVariant.SUMMARY_CENTRIC), seed=9)
    p_summary = summary_model.forward(sample_example).probs.data
    p_review = review_model.forward(_swap(sample_example)).probs.data
    assert_allclose(p_summary, p_review, atol=1e-12)
    assert summary_model.forward(sample_example).trace.get("layer0.inference").source == "summary"


def test_review_only_ignores_summary(sample_example):
    model = build_model(small_config(ModelVariant.REVIEW_ONLY_POOL), seed=1)
    changed = sample_example._replace(summary=[30, 31, 32], summary_tokens=("a", "b", "c"))
    assert_array_equal(model.forward(sample_example).probs.data, model.forward(changed).probs.data)
    # 只用评论的模型允许摘要为空
    empty = sample_example._replace(summary=[], summary_tokens=())
    assert_array_equal(model.forward(empty).probs.data, model.forward(sample_example).probs.data)


@pytest.mark.parametrize("variant", [
    ModelVariant.SUMMARY_ONLY_POOL,
    ModelVariant.SEPARATE_POOL,
    ModelVariant.JOINT_COATTN_CONCAT,
    ModelVariant.REVIEW_CENTRIC,
])
def test_empty_summary_is_rejected(variant, sample_example):
    model = build_model(small_config(variant))
    with pytest.raises(EmptySequenceError):
        model.forward(sample_example._replace(summary=[], summary_tokens=()))


def test_empty_review_is_rejected(sample_example):
    model = build_model(small_config(ModelVariant.REVIEW_CENTRIC))
    with pytest.raises(EmptySequenceError):
        model.forward(sample_example._replace(review=[], review_tokens=()))


def test_joint_hard_exposes_weights_and_labels(sample_example):
    model = build_model(small_config(ModelVariant.JOINT_HARD))
    output = model.forward(sample_example)
    n, m = len(sample_example.review), len(sample_example.summary)
    assert output.hard_weights.shape == (n + m,)
    assert output.hard_labels.tolist() == [0, 0, 1, 1, 0, 0, 0, 0]
    assert output.trace.get("hard_attention").source == "joint"


def test_coattn_trace_records_both_directions(sample_example):
    model = build_model(small_config(ModelVariant.JOINT_COATTN_REVIEW))
    trace = model.forward(sample_example).trace
    n, m = len(sample_example.review), len(sample_example.summary)
    assert trace.get("co_attention.review").weights.shape == (n, m)
    assert trace.get("co_attention.summary").weights.shape == (m, n)


def test_rating_ties_go_to_lowest_class():
    assert rating_from_probs(np.full(5, 0.2)) == 1
    assert rating_from_probs(np.array([0.1, 0.3, 0.3, 0.2, 0.1])) == 2
    assert rating_from_probs(np.array([0.0, 0.0, 0.0, 0.0, 1.0])) == 5


def test_dropout_only_in_training(sample_example):
    model = build_model(small_config(ModelVariant.REVIEW_ONLY_POOL, dropout=0.5), seed=2)
    first = model.forward(sample_example).probs.data
    assert_array_equal(first, model.forward(sample_example).probs.data)
    model.train_mode()
    assert not np.array_equal(model.forward(sample_example).probs.data, first)


def test_set_embeddings_shape_check():
    model = build_model(small_config(vocab_size=10))
    model.set_embeddings(np.ones((10, 8)))
    assert_array_equal(model.embedding.data, np.ones((10, 8)))
    with pytest.raises(ShapeError):
        model.set_embeddings(np.ones((9, 8)))


def test_frozen_embeddings_are_not_trainable():
    model = build_model(small_config(trainable_embeddings=False))
    assert "embedding" not in model.params.trainable()


def test_store_round_trip(tmp_path, toy_vocab, toy_encoded):
    config = small_config(ModelVariant.JOINT_COATTN_CONCAT, vocab_size=len(toy_vocab))
    model = build_model(config, seed=4)
    save_model(tmp_path / "ckpt", model, toy_vocab)
    loaded, vocab = load_model(tmp_path / "ckpt")
    assert vocab.tokens == toy_vocab.tokens
    assert loaded.config == config
    assert not loaded.training
    for example in toy_encoded[:5]:
        assert_array_equal(loaded.forward(example).probs.data, model.forward(example).probs.data)


def test_store_rejects_inconsistent_checkpoint(tmp_path, toy_vocab):
    model = build_model(small_config(vocab_size=len(toy_vocab)))
    directory = save_model(tmp_path / "ckpt", model, toy_vocab)
    Vocabulary(toy_vocab.tokens[:-1]).save(directory / "vocab.json")
    with pytest.raises(DataError):
        load_model(directory)
    with pytest.raises(DataError):
        load_model(tmp_path / "missing")
    (directory / "config.json").write_text(json.dumps({"variant": "nope"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_model(directory)


def test_review_centric_with_zero_values_is_layer_normed_stack(sample_example):
    config = small_config(ModelVariant.REVIEW_CENTRIC, heads=2, layers=2)
    model = build_model(config, seed=9)
    rng = np.random.default_rng(4)
    for name in model.params:
        if name.endswith(".value"):
            model.params[name].data = np.zeros_like(model.params[name].data)
        elif name.endswith(".norm.gain") or name.endswith(".norm.bias"):
            model.params[name].data = rng.normal(size=model.params[name].shape)

    hidden = ops.embedding_lookup(model.embedding, sample_example.review)
    for index in range(config.layers):
        encoded = encode_sequence(model.modules.layers[index].encoder, hidden)
        prefix = f"layers.{index}.inference.norm"
        hidden = ops.layer_norm(encoded, model.params[f"{prefix}.gain"], model.params[f"{prefix}.bias"], config.layer_norm_eps)
    logits = ops.add(ops.matmul(ops.average_pool(hidden), model.output_weight), model.output_bias)
    expected = ops.softmax(logits, axis=0).data

    assert_allclose(model.forward(sample_example).probs.data, expected, rtol=0, atol=1e-12)
