"""Scorecard building blocks: feature encoding, ridge logistic fit, banding.

The estimators follow the scikit-learn conventions (``fit`` returns self,
fitted state in trailing-underscore attributes, ``get_params``) so they can be
dropped into a :class:`sklearn.pipeline.Pipeline`. The Dataset-level helpers
(:func:`fit_encoder`, :func:`fit_logistic`, ...) wrap them for the
reject-inference code.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from ._util import format_float
from .dataset import CATEGORICAL, NUMERIC, SchemaError

logger = logging.getLogger(__name__)

OTHER = "<other>"
MODEL_FORMAT = "rejinfer-scoremodel/1"
_P_MIN = np.finfo(float).tiny
_P_MAX = 1.0 - 2.0 ** -53


class FitError(ValueError):
    """The training set cannot produce a model (e.g. a single class)."""


class NumericalError(ArithmeticError):
    """The optimizer produced non-finite values."""


def _as_frame(X):
    if isinstance(X, pd.DataFrame):
        return X
    X = np.asarray(X)
    if X.ndim != 2:
        raise SchemaError("expected a 2-D feature table")
    return pd.DataFrame(X, columns=[f"x{j}" for j in range(X.shape[1])])


class ScorecardEncoder(TransformerMixin, BaseEstimator):
    """Standardize numeric columns and one-hot encode categorical ones.

    Each categorical column gets one indicator per level seen at fit time
    (first-appearance order) plus a trailing "other" indicator for unseen
    levels. Numeric columns with zero variance on the fit rows are dropped.

    Parameters
    ----------
    categorical : list of str, optional
        Columns to treat as categorical. By default non-numeric dtypes are
        categorical.
    """

    def __init__(self, categorical=None):
        self.categorical = categorical

    def fit(self, X, y=None):
        X = _as_frame(X)
        if len(X) == 0:
            raise FitError("cannot fit an encoder on zero rows")
        forced = set(self.categorical or ())
        self.feature_names_in_ = np.array(X.columns, dtype=object)
        self.kinds_ = {}
        self.means_, self.scales_, self.levels_ = {}, {}, {}
        self.dropped_ = []
        for name in X.columns:
            col = X[name]
            numeric = (pd.api.types.is_numeric_dtype(col) and not pd.api.types.is_bool_dtype(col)
                       and name not in forced)
            if numeric:
                values = col.to_numpy(float)
                self.kinds_[name] = NUMERIC
                sd = float(values.std())
                if sd > 0:
                    self.means_[name] = float(values.mean())
                    self.scales_[name] = sd
                else:
                    self.dropped_.append(name)
            else:
                self.kinds_[name] = CATEGORICAL
                self.levels_[name] = [str(v) for v in pd.unique(col.astype(str).to_numpy())]
        self.n_features_in_ = len(self.feature_names_in_)
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "kinds_")
        out = []
        for name, kind in self.kinds_.items():
            if kind == NUMERIC:
                if name not in self.dropped_:
                    out.append(name)
            else:
                out.extend(f"{name}={level}" for level in self.levels_[name] + [OTHER])
        return np.array(out, dtype=object)

    def transform(self, X):
        check_is_fitted(self, "kinds_")
        X = _as_frame(X)
        missing = [c for c in self.kinds_ if c not in X.columns]
        if missing:
            raise SchemaError(f"missing feature column(s) {missing}")
        blocks = []
        for name, kind in self.kinds_.items():
            if kind == NUMERIC:
                if name in self.dropped_:
                    continue
                try:
                    values = X[name].to_numpy(float)
                except (TypeError, ValueError):
                    raise SchemaError(f"column {name!r} is not numeric") from None
                blocks.append(((values - self.means_[name]) / self.scales_[name])[:, None])
            else:
                levels = self.levels_[name]
                index = {level: j for j, level in enumerate(levels)}
                codes = np.array([index.get(v, len(levels)) for v in X[name].astype(str)], dtype=int)
                onehot = np.zeros((len(X), len(levels) + 1))
                onehot[np.arange(len(X)), codes] = 1.0
                blocks.append(onehot)
        if not blocks:
            return np.zeros((len(X), 0))
        return np.hstack(blocks)


def logistic_objective(theta, X, y, sample_weight, lam):
    """Weighted negative log-likelihood plus (lam/2)*||coef||^2 and its gradient.

    ``theta = [intercept, coef...]``; the intercept is not penalized.
    """
    eta = theta[0] + X @ theta[1:]
    # log(1 + exp(eta)) computed without overflow
    softplus = np.maximum(eta, 0) + np.log1p(np.exp(-np.abs(eta)))
    value = sample_weight @ (softplus - y * eta) + 0.5 * lam * theta[1:] @ theta[1:]
    r = sample_weight * (expit(eta) - y)
    grad = np.concatenate([[r.sum()], X.T @ r + lam * theta[1:]])
    return value, grad


class RidgeLogisticRegression(ClassifierMixin, BaseEstimator):
    """L2-penalized logistic regression fitted by damped Newton steps.

    Minimizes ``sum_i w_i * nll_i + lam/2 * ||coef||^2`` (intercept free).
    Each Newton step is halved until the objective does not increase, so the
    recorded ``objective_path_`` is non-increasing. Stops when the gradient
    max-norm drops below ``tol`` or after ``max_iter`` iterations.

    ``seed`` is accepted for interface uniformity; the fit is deterministic.
    """

    def __init__(self, lam=1.0, tol=1e-8, max_iter=500, seed=0):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=float, ensure_min_features=0)
        y = np.asarray(y)
        check_consistent_length(X, y)
        if not np.isin(y, (0, 1)).all():
            raise FitError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            raise FitError("both classes are required to fit a score")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        check_consistent_length(y, w)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise FitError("sample weights must be finite and > 0")
        y = y.astype(float)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]

        theta = np.zeros(X.shape[1] + 1)
        theta[0] = math.log((w @ y) / (w @ (1 - y)))
        X1 = np.hstack([np.ones((len(y), 1)), X])
        penalty = np.full(len(theta), float(self.lam))
        penalty[0] = 0.0
        value, grad = logistic_objective(theta, X, y, w, self.lam)
        path = [value]
        n_iter = 0
        while np.max(np.abs(grad)) >= self.tol and n_iter < self.max_iter:
            p = expit(X1 @ theta)
            hess = (X1 * (w * p * (1 - p))[:, None]).T @ X1 + np.diag(penalty)
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            t = 1.0
            for _ in range(60):
                cand = theta - t * step
                cand_value, cand_grad = logistic_objective(cand, X, y, w, self.lam)
                if cand_value <= value:
                    break
                t *= 0.5
            else:
                logger.debug("step halving exhausted at iteration %d", n_iter)
                break
            n_iter += 1
            if cand_value == value and np.array_equal(cand, theta):
                break
            theta, value, grad = cand, cand_value, cand_grad
            path.append(value)
        if not (np.all(np.isfinite(theta)) and np.isfinite(value)):
            raise NumericalError("logistic fit diverged")
        self.intercept_ = float(theta[0])
        self.coef_ = theta[1:].copy()
        self.n_iter_ = n_iter
        self.gradient_norm_ = float(np.max(np.abs(grad)))
        self.objective_path_ = np.array(path)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float, ensure_min_features=0)
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X):
        p = np.clip(expit(self.decision_function(X)), _P_MIN, _P_MAX)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


@dataclass(frozen=True)
class ScoreModel:
    """Fitted scorecard: S(x) = sigmoid(intercept + coef . encode(x)).

    S estimates the probability of no default (y = 1).
    """

    encoder: ScorecardEncoder = field(repr=False)
    coef: np.ndarray
    intercept: float
    lam: float
    n_iter: int = 0
    gradient_norm: float = 0.0

    def __post_init__(self):
        names = self.encoder.get_feature_names_out()
        if len(self.coef) != len(names):
            raise ValueError("coefficient vector does not match the encoded dimension")
        if not (np.all(np.isfinite(self.coef)) and math.isfinite(self.intercept)):
            raise NumericalError("non-finite model parameters")

    @property
    def feature_names(self):
        return self.encoder.get_feature_names_out()

    def decision_function(self, X):
        return self.intercept + self.encoder.transform(X) @ self.coef

    def predict_score(self, X):
        """Scores in (0, 1) for every row of the feature table ``X``."""
        return np.clip(expit(self.decision_function(X)), _P_MIN, _P_MAX)

    def score_record(self, record):
        frame = pd.DataFrame([record.features], columns=list(self.encoder.feature_names_in_))
        return float(self.predict_score(frame)[0])

    def to_text(self):
        """Versioned, line-oriented text form; floats carry 17 significant digits."""
        enc = self.encoder
        lines = [
            f"format\t{MODEL_FORMAT}",
            f"lambda\t{format_float(self.lam)}",
            f"intercept\t{format_float(self.intercept)}",
            f"iterations\t{self.n_iter}",
            f"gradient_norm\t{format_float(self.gradient_norm)}",
        ]
        for name, kind in enc.kinds_.items():
            key = json.dumps(name)
            if kind == CATEGORICAL:
                lines.append(f"categorical\t{key}\t{json.dumps(enc.levels_[name])}")
            elif name in enc.dropped_:
                lines.append(f"dropped\t{key}")
            else:
                lines.append(f"numeric\t{key}\t{format_float(enc.means_[name])}"
                             f"\t{format_float(enc.scales_[name])}")
        for name, c in zip(self.feature_names, self.coef):
            lines.append(f"coef\t{json.dumps(name)}\t{format_float(c)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields, coefs = {}, []
        enc = ScorecardEncoder()
        enc.kinds_, enc.means_, enc.scales_, enc.levels_, enc.dropped_ = {}, {}, {}, {}, []
        for line in text.splitlines():
            if not line.strip():
                continue
            parts = line.split("\t")
            tag = parts[0]
            if tag == "numeric":
                name = json.loads(parts[1])
                enc.kinds_[name] = NUMERIC
                enc.means_[name], enc.scales_[name] = float(parts[2]), float(parts[3])
            elif tag == "dropped":
                name = json.loads(parts[1])
                enc.kinds_[name] = NUMERIC
                enc.dropped_.append(name)
            elif tag == "categorical":
                name = json.loads(parts[1])
                enc.kinds_[name] = CATEGORICAL
                enc.levels_[name] = json.loads(parts[2])
            elif tag == "coef":
                coefs.append(float(parts[2]))
            else:
                fields[tag] = parts[1]
        if fields.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {fields.get('format')!r}")
        enc.feature_names_in_ = np.array(list(enc.kinds_), dtype=object)
        enc.n_features_in_ = len(enc.kinds_)
        return cls(enc, np.array(coefs), float(fields["intercept"]), float(fields["lambda"]),
                   int(fields["iterations"]), float(fields["gradient_norm"]))


class Scorecard(ClassifierMixin, BaseEstimator):
    """Encoder + ridge logistic regression on a raw feature table.

    After ``fit``, ``model_`` holds the immutable :class:`ScoreModel`.
    """

    def __init__(self, lam=1.0, categorical=None, tol=1e-8, max_iter=500, seed=0):
        self.lam = lam
        self.categorical = categorical
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X = _as_frame(X)
        encoder = ScorecardEncoder(self.categorical).fit(X)
        reg = RidgeLogisticRegression(self.lam, self.tol, self.max_iter, self.seed)
        reg.fit(encoder.transform(X), y, sample_weight)
        self.classes_ = reg.classes_
        self.objective_path_ = reg.objective_path_
        self.model_ = ScoreModel(encoder, reg.coef_, reg.intercept_, float(self.lam),
                                 reg.n_iter_, reg.gradient_norm_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_score(_as_frame(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def fit_encoder(ds, ids):
    ids = np.unique(np.asarray(ids, dtype=int))
    if ids.size == 0:
        raise FitError("cannot fit an encoder on an empty id set")
    return ScorecardEncoder(ds.schema.categorical).fit(ds.features.iloc[ids])


def encode(encoder, record):
    frame = pd.DataFrame([record.features], columns=list(encoder.feature_names_in_))
    if len(record.features) != encoder.n_features_in_:
        raise SchemaError("record length does not match the encoder")
    return encoder.transform(frame)[0]


def fit_logistic(ds, ids, weights=None, lam=1.0, seed=0, labels=None, tol=1e-8, max_iter=500):
    """Fit a scorecard on ``ids`` of ``ds``.

    Targets are the observed outcomes (an audit failure if any is masked)
    unless ``labels`` gives one label per sorted id. ``weights`` likewise
    aligns with the sorted ids. Returns a :class:`ScoreModel`.
    """
    ids = np.asarray(ids, dtype=int)
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    if ids.size == 0:
        raise FitError("empty training set")
    if np.any(np.diff(ids) == 0):
        raise FitError("duplicate ids in training set")
    y = ds.outcomes(ids) if labels is None else np.asarray(labels)[order]
    w = None if weights is None else np.asarray(weights, dtype=float)[order]
    card = Scorecard(lam, ds.schema.categorical, tol, max_iter, seed)
    return card.fit(ds.features.iloc[ids], y, w).model_


def predict_score(model, record):
    return model.score_record(record)


def score_ids(model, ds, ids):
    return model.predict_score(ds.features.iloc[np.asarray(ids, dtype=int)])


@dataclass(frozen=True)
class DecisionRule:
    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


def decide(score, rule):
    """Accept (1) iff score >= threshold."""
    return int(score >= rule.threshold)


HIGH_FIRST = "high_first"
LOW_FIRST = "low_first"


@dataclass(frozen=True)
class BandTable:
    """Equal-frequency score bands; ``ids[i]`` falls in band ``bands[i]`` (1-based)."""

    ids: np.ndarray
    bands: np.ndarray
    n_bands: int
    direction: str

    def band_of(self, record_id):
        hit = np.flatnonzero(self.ids == record_id)
        if hit.size == 0:
            raise KeyError(record_id)
        return int(self.bands[hit[0]])

    def members(self, band):
        return np.sort(self.ids[self.bands == band])

    def sizes(self):
        return np.bincount(self.bands, minlength=self.n_bands + 1)[1:]


def _score_arrays(scores, ids):
    if isinstance(scores, dict):
        keys = np.fromiter(scores.keys(), dtype=int, count=len(scores))
        values = np.fromiter(scores.values(), dtype=float, count=len(scores))
        return keys, values
    values = np.asarray(scores, dtype=float)
    keys = np.arange(len(values)) if ids is None else np.asarray(ids, dtype=int)
    if keys.shape != values.shape:
        raise ValueError("ids and scores differ in length")
    return keys, values


def make_bands(scores, n_bands, direction=HIGH_FIRST, ids=None):
    """Cut scored records into ``n_bands`` equal-frequency bands.

    ``scores`` is an id -> score mapping or an array aligned with ``ids``.
    Records are ordered by score (descending for ``high_first``, ascending
    for ``low_first``), ties by ascending id, then cut into contiguous
    chunks whose sizes differ by at most one, larger chunks first.
    """
    keys, values = _score_arrays(scores, ids)
    n = len(values)
    if n_bands < 1 or n < n_bands:
        raise ValueError(f"cannot make {n_bands} bands from {n} records")
    if direction == HIGH_FIRST:
        order = np.lexsort((keys, -values))
    elif direction == LOW_FIRST:
        order = np.lexsort((keys, values))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    base, extra = divmod(n, n_bands)
    sizes = np.full(n_bands, base)
    sizes[:extra] += 1
    bands = np.repeat(np.arange(1, n_bands + 1), sizes)
    return BandTable(keys[order], bands, int(n_bands), direction)
