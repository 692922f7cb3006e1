import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.tensor import Tensor
from app.errors import DataError
from app.models.variant import ModelVariant
from app.models.zoo import build_model
from app.services.attention import AttentionRecord, AttentionTrace
from app.services.heatmap import HeatmapBuilder, export_heatmap, rescale_weights
from tests.conftest import small_config


def test_rescale_min_max():
    assert_allclose(rescale_weights(np.array([0.1, 0.3, 0.6])), [0.0, 40.0, 100.0])
    assert_allclose(rescale_weights(np.array([0.7])), [100.0])
    assert_allclose(rescale_weights(np.array([0.25, 0.25, 0.25, 0.25])), [0.0, 0.0, 0.0, 0.0])


def test_rows_threshold_and_heads():
    record = AttentionRecord("layer0.inference", "review", np.array([[0.1, 0.3, 0.6], [0.5, 0.25, 0.25]]))
    rows = HeatmapBuilder(threshold=40).rows([record], ["a", "b", "c"])
    assert len(rows) == 2
    assert rows[0]["highlighted"] == [1, 2]
    assert rows[1]["highlighted"] == [0]
    assert [r["head"] for r in rows] == [0, 1]
    with pytest.raises(DataError):
        HeatmapBuilder().rows([record], ["a", "b"])


def test_uniform_row_highlights_nothing():
    record = AttentionRecord("self_attention", "review", np.full((1, 4), 0.25))
    rows = HeatmapBuilder().rows([record], list("abcd"))
    assert rows[0]["highlighted"] == []


def test_build_writes_html_and_sidecar(tmp_path):
    trace = AttentionTrace()
    trace.add("layer0.inference", "review", Tensor([[0.2, 0.8]]))
    trace.add("co_attention.review", "summary", Tensor([[1.0]]))
    out = export_heatmap(trace, ["<b>", "good"], tmp_path / "viz" / "example.html")
    html = out.read_text(encoding="utf-8")
    assert "&lt;b&gt;" in html and "<b>" not in html
    assert "tok hot" in html
    sidecar = json.loads((tmp_path / "viz" / "example.json").read_text(encoding="utf-8"))
    assert sidecar["tokens"] == ["<b>", "good"]
    assert sidecar["threshold"] == 50.0
    assert [layer["name"] for layer in sidecar["layers"]] == ["layer0.inference"]
    assert sidecar["layers"][0]["rescaled"] == [0.0, 100.0]


def test_export_filters(tmp_path):
    trace = AttentionTrace()
    trace.add("layer0.inference", "review", Tensor([[0.2, 0.8]]))
    with pytest.raises(DataError):
        export_heatmap(trace, ["a", "b"], tmp_path / "x.html", source="summary")
    with pytest.raises(DataError):
        export_heatmap(trace, ["a", "b"], tmp_path / "x.html", names=["layer1.inference"])


def test_centric_model_trace_renders(tmp_path, sample_example):
    model = build_model(small_config(ModelVariant.REVIEW_CENTRIC), seed=0)
    trace = model.forward(sample_example).trace
    out = export_heatmap(trace, sample_example.review_tokens, tmp_path / "centric.html", threshold=0)
    sidecar = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
    # 2 层 × 2 头，阈值 0 时全部高亮
    assert len(sidecar["layers"]) == 4
    assert all(len(row["highlighted"]) == len(sample_example.review_tokens) for row in sidecar["layers"])
