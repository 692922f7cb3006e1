import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import ConfigError
from app.schemas.data import DEFAULT_LEXICON, SyntheticSpec, load_synthetic_spec
from app.services.synthetic import SignalSide, expected_conflict_fraction, gen_synthetic, gen_synthetic_with_sides
from tests.conftest import toy_spec


def _count_class_words(tokens, rating):
    words = set(DEFAULT_LEXICON[rating])
    return sum(1 for t in tokens if t in words)


def test_generation_is_deterministic():
    spec = SyntheticSpec(seed=42)
    assert gen_synthetic(spec, 50) == gen_synthetic(spec, 50)
    assert gen_synthetic(spec, 50) != gen_synthetic(SyntheticSpec(seed=43), 50)
    assert gen_synthetic(spec, 0) == []


def test_lengths_and_ratings_within_ranges():
    spec = SyntheticSpec(review_length=(5, 9), summary_length=(2, 4), seed=1)
    for example in gen_synthetic(spec, 200):
        assert 5 <= len(example.review) <= 9
        assert 2 <= len(example.summary) <= 4
        assert 1 <= example.rating <= 5


def test_signal_is_planted_on_the_chosen_side():
    spec = toy_spec(conflict_rate=0.5, seed=8)
    for item in gen_synthetic_with_sides(spec, 300):
        example = item.example
        in_review = _count_class_words(example.review, example.rating)
        in_summary = _count_class_words(example.summary, example.rating)
        assert in_review == (spec.review_signal_tokens if item.side is not SignalSide.SUMMARY else 0)
        assert in_summary == (spec.summary_signal_tokens if item.side is not SignalSide.REVIEW else 0)


def test_noise_never_uses_the_gold_class():
    spec = toy_spec(noise_rate=1.0, seed=2)
    for example in gen_synthetic(spec, 100):
        assert _count_class_words(example.review, example.rating) == spec.review_signal_tokens
        # 噪声把所有填充位换成了其他类别的情感词
        assert not set(example.review) & set(spec.neutral)


def test_single_side_fraction_follows_conflict_rate():
    spec = SyntheticSpec(review_length=(1, 2), summary_length=(1, 1), review_signal_tokens=1, conflict_rate=0.5, seed=3)
    n = 10_000
    sides = [item.side for item in gen_synthetic_with_sides(spec, n)]
    single = sum(1 for s in sides if s is not SignalSide.BOTH) / n
    assert abs(single - 0.5) < 3 * np.sqrt(0.25 / n)
    review_only = sum(1 for s in sides if s is SignalSide.REVIEW) / n
    assert abs(review_only - 0.25) < 3 * np.sqrt(0.25 * 0.75 / n)


def test_class_priors_are_respected():
    priors = [0.1, 0.2, 0.3, 0.2, 0.2]
    spec = SyntheticSpec(review_length=(1, 1), summary_length=(1, 1), review_signal_tokens=1, class_priors=priors, seed=4)
    n = 10_000
    ratings = np.array([e.rating for e in gen_synthetic(spec, n)])
    for rating, p in enumerate(priors, start=1):
        observed = float(np.mean(ratings == rating))
        assert abs(observed - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_expected_conflict_fraction():
    assert expected_conflict_fraction(SyntheticSpec(conflict_rate=0.3)) == pytest.approx(0.24)
    assert expected_conflict_fraction(SyntheticSpec(conflict_rate=0.0)) == 0.0


@pytest.mark.parametrize("overrides", [
    {"conflict_rate": 1.5},
    {"noise_rate": -0.1},
    {"review_length": (5, 2)},
    {"class_priors": [0.5, 0.5]},
    {"class_priors": [0.5, 0.5, 0.5, 0.0, 0.0]},
    {"summary_length": (1, 3), "summary_signal_tokens": 2},
    {"unknown": 1},
])
def test_invalid_specs(overrides):
    with pytest.raises(ValidationError):
        SyntheticSpec(**overrides)


def test_empty_lexicon_class():
    lexicon = {k: list(v) for k, v in DEFAULT_LEXICON.items()}
    lexicon[3] = []
    with pytest.raises(ConfigError):
        gen_synthetic(SyntheticSpec(lexicon=lexicon), 1)


def test_load_spec_from_key_value_file(tmp_path):
    path = tmp_path / "synthetic.env"
    path.write_text("conflict_rate=0.5\nreview_length=4,8\nseed=9\n", encoding="utf-8")
    spec = load_synthetic_spec(path)
    assert spec.conflict_rate == 0.5
    assert spec.review_length == (4, 8)
    assert spec.seed == 9


def test_load_spec_from_json(tmp_path):
    path = tmp_path / "synthetic.json"
    lexicon = {str(k): [f"w{k}a", f"w{k}b"] for k in range(1, 6)}
    path.write_text(json.dumps({"lexicon": lexicon, "summary_length": [2, 2]}), encoding="utf-8")
    spec = load_synthetic_spec(path)
    assert spec.lexicon[4] == ["w4a", "w4b"]
    assert spec.summary_length == (2, 2)
    path.write_text(json.dumps({"conflict_rate": 7}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_synthetic_spec(path)
    with pytest.raises(ConfigError):
        load_synthetic_spec(tmp_path / "missing.json")
