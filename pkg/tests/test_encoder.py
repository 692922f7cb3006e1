import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core import ops
from app.core.params import ParameterSet
from app.core.tensor import Tensor
from app.errors import EmptySequenceError, ShapeError
from app.services.encoder import BiLstmEncoder, LstmParams, encode_sequence, lstm_step


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _scalar_params(wx, wh, b) -> LstmParams:
    # 门顺序 i, f, o, g
    return LstmParams(Tensor([wx]), Tensor([wh]), Tensor(b))


def test_lstm_step_matches_scalar_oracle():
    wx, wh, b = [0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.9], [0.0, 1.0, 0.1, -0.2]
    params = _scalar_params(wx, wh, b)
    x, h_prev, c_prev = 0.7, -0.2, 0.3
    z = [wx[k] * x + wh[k] * h_prev + b[k] for k in range(4)]
    i, f, o, g = _sigmoid(z[0]), _sigmoid(z[1]), _sigmoid(z[2]), math.tanh(z[3])
    c = f * c_prev + i * g
    h = o * math.tanh(c)
    h_t, c_t = lstm_step(params, Tensor([x]), Tensor([h_prev]), Tensor([c_prev]))
    assert h_t.item() == pytest.approx(h, abs=1e-14)
    assert c_t.item() == pytest.approx(c, abs=1e-14)


def test_scan_equals_repeated_steps():
    rng = np.random.default_rng(3)
    params = LstmParams(Tensor(rng.standard_normal((3, 8))), Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal(8)))
    x = rng.standard_normal((5, 3))

    h, c = Tensor(np.zeros(2)), Tensor(np.zeros(2))
    forward_rows = []
    for t in range(5):
        h, c = lstm_step(params, Tensor(x[t]), h, c)
        forward_rows.append(h.data)
    scanned = ops.lstm_scan(Tensor(x), params.w_ih, params.w_hh, params.bias)
    assert_allclose(scanned.data, np.stack(forward_rows), atol=1e-14)

    h, c = Tensor(np.zeros(2)), Tensor(np.zeros(2))
    backward_rows = [None] * 5
    for t in reversed(range(5)):
        h, c = lstm_step(params, Tensor(x[t]), h, c)
        backward_rows[t] = h.data
    reversed_scan = ops.lstm_scan(Tensor(x), params.w_ih, params.w_hh, params.bias, reverse=True)
    assert_allclose(reversed_scan.data, np.stack(backward_rows), atol=1e-14)


def test_create_sets_forget_bias():
    params = ParameterSet(np.random.default_rng(0))
    lstm = LstmParams.create(params, "lstm", input_size=3, hidden_size=2)
    assert_allclose(lstm.bias.data, [0, 0, 1, 1, 0, 0, 0, 0])
    assert np.all(np.abs(lstm.w_ih.data) <= 1 / math.sqrt(2))
    assert lstm.input_size == 3 and lstm.hidden_size == 2


def test_encode_sequence_shape_and_directions():
    params = ParameterSet(np.random.default_rng(1))
    encoder = BiLstmEncoder.create(params, "enc", input_size=3, hidden_size=4)
    x = Tensor(np.random.default_rng(2).standard_normal((6, 3)))
    hidden = encode_sequence(encoder, x)
    assert hidden.shape == (6, 8)
    fw = ops.lstm_scan(x, encoder.forward.w_ih, encoder.forward.w_hh, encoder.forward.bias)
    assert_allclose(hidden.data[:, :4], fw.data)
    # 后向的最后一个词只看到它自己
    bw = encoder.backward
    h_last, _ = lstm_step(bw, Tensor(x.data[-1]), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    assert_allclose(hidden.data[-1, 4:], h_last.data, atol=1e-14)


def test_encode_sequence_errors():
    params = ParameterSet(np.random.default_rng(1))
    encoder = BiLstmEncoder.create(params, "enc", input_size=3, hidden_size=2)
    with pytest.raises(EmptySequenceError):
        encode_sequence(encoder, Tensor(np.zeros((0, 3))))
    with pytest.raises(ShapeError):
        encode_sequence(encoder, Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        encode_sequence(encoder, Tensor(np.zeros((2, 5))))


def test_lstm_step_dimension_mismatch():
    params = _scalar_params([0.1] * 4, [0.1] * 4, [0.0] * 4)
    with pytest.raises(ShapeError):
        lstm_step(params, Tensor([1.0, 2.0]), Tensor([0.0]), Tensor([0.0]))


def test_forward_half_is_causal():
    params = ParameterSet(np.random.default_rng(3))
    encoder = BiLstmEncoder.create(params, "enc", input_size=3, hidden_size=4)
    x = np.random.default_rng(4).standard_normal((7, 3))
    perturbed = x.copy()
    t = 3
    perturbed[t + 1] += 5.0
    before = encode_sequence(encoder, Tensor(x)).data
    after = encode_sequence(encoder, Tensor(perturbed)).data
    # 前向只看 ≤ t 的输入，后向只看 ≥ 位置本身的输入
    np.testing.assert_array_equal(after[: t + 1, :4], before[: t + 1, :4])
    np.testing.assert_array_equal(after[t + 2:, 4:], before[t + 2:, 4:])
    assert not np.allclose(after[t + 1:, :4], before[t + 1:, :4])


def test_backward_direction_mirrors_forward_on_reversed_input():
    params = ParameterSet(np.random.default_rng(5))
    encoder = BiLstmEncoder.create(params, "enc", input_size=3, hidden_size=2)
    for name in ("w_ih", "w_hh", "bias"):
        getattr(encoder.backward, name).data = getattr(encoder.forward, name).data.copy()
    x = np.random.default_rng(6).standard_normal((5, 3))
    hidden = encode_sequence(encoder, Tensor(x)).data
    mirrored = encode_sequence(encoder, Tensor(x[::-1].copy())).data
    assert_allclose(hidden[:, 2:], mirrored[::-1, :2], rtol=0, atol=1e-14)
    assert_allclose(hidden[:, :2], mirrored[::-1, 2:], rtol=0, atol=1e-14)
