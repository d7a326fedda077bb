import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.model_selection import cross_val_score

from conftest import random_binary_problem
from oracles import central_difference
from rejinfer.dataset import MaskedOutcomeError, SchemaError
from rejinfer.metrics import roc_auc
from rejinfer.scoring import (
    OTHER, BandTable, DecisionRule, FitError, RidgeLogisticRegression, Scorecard, ScorecardEncoder,
    ScoreModel, decide, encode, fit_encoder, fit_logistic, logistic_objective, make_bands,
    predict_score,
)


def test_encoder_standardizes_over_fit_rows():
    enc = ScorecardEncoder().fit(pd.DataFrame({"v": [8.0, 10.0, 12.0]}))
    sd = np.std([8.0, 10.0, 12.0])
    assert enc.means_["v"] == 10.0
    assert enc.transform(pd.DataFrame({"v": [12.0]}))[0, 0] == pytest.approx(2 / sd)
    assert enc.transform(pd.DataFrame({"v": [10.0]}))[0, 0] == 0.0


def test_encoder_drops_constant_column():
    enc = ScorecardEncoder().fit(pd.DataFrame({"c": [3.0, 3.0, 3.0], "v": [1.0, 2.0, 3.0]}))
    assert enc.dropped_ == ["c"]
    assert enc.transform(pd.DataFrame({"c": [99.0], "v": [2.0]})).shape == (1, 1)


def test_encoder_unseen_level_goes_to_other():
    enc = ScorecardEncoder().fit(pd.DataFrame({"g": ["A", "B", "A"]}))
    assert list(enc.get_feature_names_out()) == ["g=A", "g=B", f"g={OTHER}"]
    assert enc.transform(pd.DataFrame({"g": ["C"]})).tolist() == [[0.0, 0.0, 1.0]]
    assert enc.transform(pd.DataFrame({"g": ["B"]})).tolist() == [[0.0, 1.0, 0.0]]


def test_encoder_missing_column_is_schema_error():
    enc = ScorecardEncoder().fit(pd.DataFrame({"a": [1.0, 2.0], "b": [1.0, 3.0]}))
    with pytest.raises(SchemaError):
        enc.transform(pd.DataFrame({"a": [1.0]}))


def test_encode_record_shape(toy_dataset):
    enc = fit_encoder(toy_dataset, toy_dataset.ids)
    vec = encode(enc, toy_dataset.record(0))
    assert len(vec) == 1 + (2 + 1)
    assert vec[1:].sum() == 1.0


def test_fit_encoder_uses_only_given_ids(toy_dataset):
    enc = fit_encoder(toy_dataset, [0, 1, 2])
    assert enc.means_["income"] == 10.0
    with pytest.raises(FitError):
        fit_encoder(toy_dataset, [])


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    X, y = random_binary_problem(rng, 40, 4)
    w = rng.uniform(0.5, 2.0, 40)
    lam = rng.uniform(0, 3)
    theta = rng.standard_normal(5)
    _, grad = logistic_objective(theta, X, y, w, lam)
    fd = central_difference(lambda t: logistic_objective(t, X, y, w, lam)[0], theta)
    rel = np.abs(fd - grad) / np.maximum(np.abs(fd), np.abs(grad))
    assert np.all(rel < 1e-6)


def test_separable_data_ranks_perfectly():
    X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    reg = RidgeLogisticRegression(lam=0.1).fit(X, y)
    assert roc_auc(reg.predict_proba(X)[:, 1], y) == 1.0
    assert reg.gradient_norm_ < 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_huge_ridge_shrinks_to_weighted_base_rate(seed):
    rng = np.random.default_rng(seed)
    X, y = random_binary_problem(rng, 200, 5)
    w = rng.uniform(0.2, 3.0, 200)
    reg = RidgeLogisticRegression(lam=1e6).fit(X, y, w)
    base = (w @ y) / w.sum()
    assert np.max(np.abs(reg.coef_)) < 1e-3
    assert abs(reg.intercept_ - math.log(base / (1 - base))) < 1e-2


def test_objective_path_is_monotone():
    rng = np.random.default_rng(4)
    X, y = random_binary_problem(rng, 300, 6)
    reg = RidgeLogisticRegression(lam=0.01).fit(X * 5, y)
    assert np.all(np.diff(reg.objective_path_) <= 0)
    assert reg.n_iter_ >= 2


def test_weight_and_lambda_homogeneity():
    rng = np.random.default_rng(5)
    X, y = random_binary_problem(rng, 150, 4)
    w = rng.uniform(0.5, 1.5, 150)
    a = RidgeLogisticRegression(lam=0.7).fit(X, y, w)
    b = RidgeLogisticRegression(lam=1.4).fit(X, y, 2 * w)
    np.testing.assert_allclose(b.coef_, a.coef_, atol=1e-6, rtol=0)
    assert abs(a.intercept_ - b.intercept_) < 1e-6


def test_single_class_is_an_error():
    with pytest.raises(FitError):
        RidgeLogisticRegression().fit(np.zeros((3, 1)), [1, 1, 1])


def test_max_iter_caps_iterations():
    X = np.array([[-1.0], [1.0]])
    reg = RidgeLogisticRegression(lam=0.0, max_iter=5).fit(X, [0, 1])
    assert reg.n_iter_ <= 5


def test_predict_score_closed_forms(toy_dataset):
    model = fit_logistic(toy_dataset, [0, 1, 2, 3])
    zero = ScoreModel(model.encoder, np.zeros_like(model.coef), 0.0, 1.0)
    assert predict_score(zero, toy_dataset.record(0)) == 0.5
    logit = math.log(0.8 / 0.2)
    fixed = ScoreModel(model.encoder, np.zeros_like(model.coef), logit, 1.0)
    assert predict_score(fixed, toy_dataset.record(1)) == pytest.approx(0.8, abs=1e-15)


def test_score_increases_with_positive_coefficient():
    X = pd.DataFrame({"v": np.arange(20.0)})
    y = (np.arange(20) % 3 != 0).astype(int)
    y[-5:] = 1
    card = Scorecard(lam=1.0).fit(X, y)
    assert card.model_.coef[0] > 0
    s = card.model_.predict_score(pd.DataFrame({"v": [1.0, 2.0, 3.0]}))
    assert s[0] < s[1] < s[2]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_scores_strictly_inside_unit_interval(values):
    X = pd.DataFrame({"v": [0.0, 1.0, 2.0, 3.0]})
    model = Scorecard(lam=0.0, max_iter=3).fit(X, [0, 0, 1, 1]).model_
    big = ScoreModel(model.encoder, np.array([50.0]), 0.0, 0.0)
    s = big.predict_score(pd.DataFrame({"v": values}))
    assert np.all((s > 0) & (s < 1))


def test_fit_logistic_reads_only_visible_outcomes(toy_dataset):
    fit_logistic(toy_dataset, toy_dataset.accepted_ids())
    assert toy_dataset.audit.illegal_reads == 0


@pytest.mark.masked_read
def test_fit_logistic_on_masked_ids_fails(toy_dataset):
    with pytest.raises(MaskedOutcomeError):
        fit_logistic(toy_dataset, toy_dataset.ids)
    # one count per masked record requested
    assert toy_dataset.audit.illegal_reads == 2


def test_model_text_round_trip(synthetic_small):
    model = fit_logistic(synthetic_small, synthetic_small.ids, lam=0.5)
    text = model.to_text()
    again = ScoreModel.from_text(text)
    assert again.to_text() == text
    X = synthetic_small.features
    np.testing.assert_array_equal(again.predict_score(X), model.predict_score(X))


def test_decision_rule():
    assert decide(0.6, DecisionRule(0.6)) == 1
    assert decide(0.6 - 1e-12, DecisionRule(0.6)) == 0
    assert all(decide(s, DecisionRule(0.0)) == 1 for s in (0.0, 0.3, 1.0))
    with pytest.raises(ValueError):
        DecisionRule(1.5)


def test_make_bands_examples():
    t = make_bands(np.linspace(0, 1, 40), 20)
    assert isinstance(t, BandTable)
    assert t.sizes().tolist() == [2] * 20
    assert t.band_of(39) == 1 and t.band_of(0) == 20
    flat = make_bands(np.zeros(40), 20)
    assert flat.members(1).tolist() == [0, 1]
    assert flat.members(20).tolist() == [38, 39]
    with pytest.raises(ValueError):
        make_bands(np.zeros(10), 20)


def test_make_bands_larger_chunks_first_and_directions():
    t = make_bands({10: 0.1, 11: 0.5, 12: 0.9, 13: 0.3, 14: 0.7}, 2, "low_first")
    assert t.sizes().tolist() == [3, 2]
    assert t.members(1).tolist() == [10, 11, 13]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=5, max_size=80), st.integers(1, 5),
       st.sampled_from(["high_first", "low_first"]))
def test_bands_invariant_under_increasing_transform(values, n_bands, direction):
    scores = np.array(values, dtype=float)
    a = make_bands(scores, n_bands, direction)
    b = make_bands(np.exp(scores / 4) * 7 - 2, n_bands, direction)
    np.testing.assert_array_equal(a.ids, b.ids)
    np.testing.assert_array_equal(a.bands, b.bands)
    assert a.sizes().max() - a.sizes().min() <= 1
    assert sorted(a.ids.tolist()) == list(range(len(values)))


def test_sklearn_compatibility():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((120, 3))
    y = (X[:, 0] + 0.5 * rng.standard_normal(120) > 0).astype(int)
    frame = pd.DataFrame(X, columns=["a", "b", "c"])
    card = Scorecard(lam=2.0)
    assert clone(card).get_params()["lam"] == 2.0
    scores = cross_val_score(card, frame, y, cv=3, scoring="roc_auc")
    assert np.all(scores > 0.5)
    reg = RidgeLogisticRegression().set_params(lam=3.0)
    assert reg.get_params()["lam"] == 3.0
