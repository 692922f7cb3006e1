import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.tensor import Tensor, no_grad
from app.errors import DataError, ShapeError
from app.models.variant import ModelVariant
from app.models.zoo import build_model
from app.schemas.run import TrainConfig
from app.services.attention import hard_attention_loss
from app.services.corpus import EncodedExample
from app.services.trainer import AdamState, adam_step, clip_grad_norm, evaluate, example_loss, train
from tests.conftest import small_config


class _FixedModel:
    """按样本评分返回固定分布的替身模型。"""

    def __init__(self, table: dict[int, int]):
        self.table = table
        self.training = True

    def eval_mode(self):
        self.training = False
        return self

    def forward(self, example):
        probs = np.zeros(5)
        probs[self.table[example.rating] - 1] = 1.0

        class _Out:
            pass

        out = _Out()
        out.probs = Tensor(probs)
        return out


def _examples(ratings):
    return [EncodedExample([2], [3], r, ("a",), ("b",)) for r in ratings]


def test_adam_first_step_oracle():
    param = Tensor([0.0], requires_grad=True)
    state = AdamState(lr=0.1, eps=1e-8)
    adam_step(state, {"w": param}, {"w": np.array([1.0])})
    # m̂ = 1, v̂ = 1
    assert param.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_keeps_parameter():
    param = Tensor([1.5, -2.0], requires_grad=True)
    adam_step(AdamState(), {"w": param}, {"w": np.zeros(2)})
    assert_array_equal(param.data, [1.5, -2.0])


def test_adam_skips_missing_and_rejects_bad_shapes():
    param = Tensor([1.0], requires_grad=True)
    adam_step(AdamState(), {"w": param})
    assert_array_equal(param.data, [1.0])
    with pytest.raises(ShapeError):
        adam_step(AdamState(), {"w": param}, {"w": np.ones(2)})


def test_clip_grad_norm():
    a = Tensor([0.0], requires_grad=True)
    b = Tensor([0.0, 0.0], requires_grad=True)
    a.grad = np.array([3.0])
    b.grad = np.array([0.0, 4.0])
    assert clip_grad_norm({"a": a, "b": b}, 1.0) == pytest.approx(5.0)
    assert_allclose(a.grad, [0.6])
    assert_allclose(b.grad, [0.0, 0.8])
    # 未超过上限时不动
    assert clip_grad_norm({"a": a, "b": b}, 10.0) == pytest.approx(1.0)
    assert_allclose(a.grad, [0.6])


@pytest.mark.parametrize("workers", [1, 2])
def test_evaluate_accuracy_and_predictions(workers):
    model = _FixedModel({1: 1, 2: 3})
    result = evaluate(model, _examples([1, 2]), workers=workers)
    assert result.accuracy == 0.5
    assert result.predictions == [1, 3]
    assert model.training


def test_evaluate_empty_corpus():
    with pytest.raises(DataError):
        evaluate(_FixedModel({}), [])


def test_example_loss_adds_hard_attention_term(sample_example):
    model = build_model(small_config(ModelVariant.JOINT_HARD), seed=0)
    base = example_loss(model, sample_example, hard_weight=0.0).item()
    with_aux = example_loss(model, sample_example, hard_weight=2.0).item()
    output = model.forward(sample_example)
    aux = hard_attention_loss(output.hard_weights, output.hard_labels).item()
    assert aux > 0
    assert with_aux == pytest.approx(base + 2.0 * aux)
    assert base == pytest.approx(-math.log(output.probs.data[sample_example.rating - 1]))


def test_example_loss_same_without_tracking(sample_example):
    model = build_model(small_config(ModelVariant.JOINT_HARD), seed=0)
    tracked = example_loss(model, sample_example, hard_weight=1.5)
    with no_grad():
        untracked = example_loss(model, sample_example, hard_weight=1.5)
    assert tracked.requires_grad and not untracked.requires_grad
    assert untracked.item() == pytest.approx(tracked.item(), rel=1e-12)


def test_example_loss_without_overlap_is_plain_cross_entropy(sample_example):
    # 摘要与评论没有公共词，抽取标签全零
    disjoint = sample_example._replace(summary=[90, 91], summary_tokens=("zzz", "qqq"))
    model = build_model(small_config(ModelVariant.JOINT_HARD, vocab_size=100), seed=0)
    output = model.forward(disjoint)
    assert output.hard_labels.sum() == 0
    loss = example_loss(model, disjoint, hard_weight=3.0).item()
    assert loss == pytest.approx(-math.log(output.probs.data[disjoint.rating - 1]))


def test_train_rejects_empty_sets(toy_encoded):
    model = build_model(small_config(vocab_size=60))
    with pytest.raises(DataError):
        train(model, [], toy_encoded, TrainConfig())
    with pytest.raises(DataError):
        train(model, toy_encoded, [], TrainConfig())


def test_early_stop_with_frozen_learning_rate(toy_encoded, toy_vocab):
    model = build_model(small_config(ModelVariant.REVIEW_ONLY_POOL, vocab_size=len(toy_vocab)), seed=1)
    before = model.params.state()
    seen = []
    result = train(model, toy_encoded, toy_encoded[:8], TrainConfig(epochs=10, learning_rate=0.0, patience=1), seen.append)
    assert [r.epoch for r in result.history] == [1, 2]
    assert [r.improved for r in result.history] == [True, False]
    assert seen == result.history
    for name, values in before.items():
        assert_array_equal(model.params[name].data, values)


def test_first_batch_loss_matches_initial_forward(toy_encoded, toy_vocab):
    config = small_config(ModelVariant.REVIEW_ONLY_POOL, vocab_size=len(toy_vocab))
    expected = sum(example_loss(build_model(config, seed=7), ex).item() for ex in toy_encoded)
    result = train(
        build_model(config, seed=7), toy_encoded, toy_encoded,
        TrainConfig(epochs=1, batch_size=len(toy_encoded), learning_rate=0.01),
    )
    record = result.history[0]
    assert len(record.batch_losses) == 1
    assert record.batch_losses[0] == pytest.approx(expected, rel=1e-9)
    assert record.train_loss == pytest.approx(expected / len(toy_encoded), rel=1e-9)
    # 初始化附近的平均损失接近均匀分布的 ln 5
    assert 0.8 * math.log(5) <= record.train_loss <= 1.3 * math.log(5)


def test_training_is_deterministic(toy_encoded, toy_vocab):
    config = small_config(ModelVariant.SEPARATE_POOL, vocab_size=len(toy_vocab), dropout=0.3)
    runs = []
    for _ in range(2):
        result = train(build_model(config, seed=5), toy_encoded, toy_encoded[:8], TrainConfig(epochs=2, batch_size=8, seed=3, patience=5))
        runs.append(result)
    assert [r.batch_losses for r in runs[0].history] == [r.batch_losses for r in runs[1].history]
    for name in runs[0].model.params:
        assert_array_equal(runs[0].model.params[name].data, runs[1].model.params[name].data)


def test_review_only_overfits_clean_corpus(toy_encoded, toy_vocab):
    model = build_model(small_config(ModelVariant.REVIEW_ONLY_POOL, vocab_size=len(toy_vocab), hidden_size=8), seed=0)
    config = TrainConfig(epochs=200, batch_size=4, learning_rate=0.02, patience=200, clip_norm=None, target_accuracy=1.0)
    result = train(model, toy_encoded, toy_encoded, config)
    assert len(result.history) <= 200
    assert result.history[-1].dev_accuracy == 1.0
    # 结束时恢复最佳参数
    assert evaluate(result.model, toy_encoded).accuracy == 1.0


def test_target_accuracy_stops_early(toy_encoded, toy_vocab):
    model = build_model(small_config(ModelVariant.REVIEW_ONLY_POOL, vocab_size=len(toy_vocab)), seed=0)
    result = train(model, toy_encoded, toy_encoded, TrainConfig(epochs=5, learning_rate=0.0, patience=5, target_accuracy=0.01))
    assert len(result.history) == 1


@pytest.mark.slow
@pytest.mark.parametrize("variant", list(ModelVariant))
def test_every_variant_overfits_clean_corpus(variant, toy_encoded, toy_vocab):
    model = build_model(small_config(variant, vocab_size=len(toy_vocab), hidden_size=8), seed=0)
    config = TrainConfig(epochs=200, batch_size=4, learning_rate=0.02, patience=200, clip_norm=None, target_accuracy=1.0)
    result = train(model, toy_encoded, toy_encoded, config)
    assert len(result.history) <= 200
    assert evaluate(result.model, toy_encoded).accuracy == 1.0
