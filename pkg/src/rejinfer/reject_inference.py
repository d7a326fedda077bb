"""Reject-inference techniques.

Each technique is an estimator whose ``fit(dataset, ids)`` trains a default
score on the records ``ids`` of a selection-biased :class:`~rejinfer.dataset.Dataset`
and stores the resulting :class:`~rejinfer.scoring.ScoreModel` in ``model_``:

=================  ==========================================================
Extrapolation      score fitted on the accepted only, applied to everyone
Reclassification   rejects labelled by the accepted-only score, then refit
Augmentation       accepted re-weighted by inverse acceptance frequency per band
Parcelling         rejects labelled at random per band at an inflated bad rate
ControlGroup       a sample of rejects is granted credit and its outcomes used
=================  ==========================================================

Only :class:`ControlGroup` ever reads a reject's outcome, and only after the
dataset reveals the sampled records.
"""

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._util import largest_remainder, round_half_up
from .scoring import HIGH_FIRST, LOW_FIRST, fit_logistic, make_bands, score_ids

logger = logging.getLogger(__name__)

TECHNIQUES = ("extrapolation", "reclassification", "augmentation", "parcelling", "control_group")
STRATEGIES = ("GC1", "GC2", "GC3")


@dataclass(frozen=True)
class TechniqueConfig:
    technique: str = "extrapolation"
    n_bands: int = 20
    cutoff: float | str = 0.5
    kappa: float = 2.0
    strategy: str = "GC1"
    fraction: float = 0.30
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if self.cutoff != "prior" and not 0 < float(self.cutoff) < 1:
            raise ValueError("cutoff must lie in (0, 1) or be 'prior'")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown control-group strategy {self.strategy!r}")
        if not 0 < self.fraction <= 1:
            raise ValueError("control fraction must lie in (0, 1]")
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


class RejectInferenceEstimator(BaseEstimator):
    """Shared plumbing: id handling, the accepted-only base fit, scoring."""

    technique = None

    def _prepare(self, dataset, ids):
        ids = dataset.ids if ids is None else np.unique(np.asarray(ids, dtype=int))
        accepted = dataset.accepted_ids(ids)
        rejected = dataset.rejected_ids(ids)
        return ids, accepted, rejected

    def _fit_accepted(self, dataset, accepted, weights=None):
        return fit_logistic(dataset, accepted, weights, self.lam, self.seed)

    def _finish(self, model, **provenance):
        self.model_ = model
        self.provenance_ = {"technique": self.technique, **self.get_params(), **provenance}
        return self

    def predict_score(self, X):
        """Estimated P(no default) for each row of the feature table ``X``."""
        check_is_fitted(self, "model_")
        return self.model_.predict_score(X)

    def predict_proba(self, X):
        p = self.predict_score(X)
        return np.column_stack([1 - p, p])

    def provenance_text(self):
        """Plain-text provenance block written next to the model document."""
        check_is_fitted(self, "provenance_")
        lines = []
        for key in sorted(self.provenance_):
            value = self.provenance_[key]
            if isinstance(value, (list, tuple, np.ndarray)):
                value = ",".join(str(int(v)) for v in value)
            lines.append(f"{key}\t{value}")
        return "\n".join(lines) + "\n"


class Extrapolation(RejectInferenceEstimator):
    """Fit on the accepted only; the score is extrapolated to the rejects."""

    technique = "extrapolation"

    def __init__(self, lam=1.0, seed=0):
        self.lam = lam
        self.seed = seed

    def fit(self, dataset, ids=None):
        _, accepted, _ = self._prepare(dataset, ids)
        return self._finish(self._fit_accepted(dataset, accepted), n_train=len(accepted))


def prior_matched_cutoff_labels(base_scores, accepted_default_rate):
    """Label the lowest-scored round(rate * M) rejects as defaults (ties by position)."""
    base_scores = np.asarray(base_scores, dtype=float)
    n_bad = round_half_up(accepted_default_rate * len(base_scores))
    order = np.lexsort((np.arange(len(base_scores)), base_scores))
    labels = np.ones(len(base_scores), dtype=int)
    labels[order[:n_bad]] = 0
    return labels


class Reclassification(RejectInferenceEstimator):
    """Label rejects with the accepted-only score, refit on the augmented set.

    ``cutoff`` is the score at or above which a reject is labelled good, or
    ``"prior"`` to label as bad the lowest-scored rejects in the proportion of
    defaults observed among the accepted.
    """

    technique = "reclassification"

    def __init__(self, cutoff=0.5, lam=1.0, seed=0):
        self.cutoff = cutoff
        self.lam = lam
        self.seed = seed

    def fit(self, dataset, ids=None):
        _, accepted, rejected = self._prepare(dataset, ids)
        base = self._fit_accepted(dataset, accepted)
        if rejected.size == 0:
            return self._finish(base, n_train=len(accepted), n_labelled_bad=0)
        scores = score_ids(base, dataset, rejected)
        if self.cutoff == "prior":
            bad_rate = float(np.mean(dataset.outcomes(accepted) == 0))
            reject_labels = prior_matched_cutoff_labels(scores, bad_rate)
        else:
            reject_labels = (scores >= float(self.cutoff)).astype(int)
        train = np.concatenate([accepted, rejected])
        labels = np.concatenate([dataset.outcomes(accepted), reject_labels])
        self.reject_labels_ = dict(zip(rejected.tolist(), reject_labels.tolist()))
        model = fit_logistic(dataset, train, None, self.lam, self.seed, labels=labels)
        return self._finish(model, n_train=len(train),
                            n_labelled_bad=int((reject_labels == 0).sum()))


def augmentation_weights(table, decisions):
    """Inverse acceptance-frequency weights per band.

    ``decisions`` maps each id of the band table (mapping or array aligned
    with ``table.ids``) to 0/1. In band b with n_b records of which a_b are
    accepted, each accepted record gets weight n_b / a_b, kept exact as a
    :class:`fractions.Fraction`. Returns ``(weights, excluded_bands)`` where
    bands without accepted records are excluded.
    """
    if isinstance(decisions, dict):
        d = np.array([decisions[int(i)] for i in table.ids], dtype=int)
    else:
        d = np.asarray(decisions, dtype=int)
    weights, excluded = {}, []
    for b in range(1, table.n_bands + 1):
        in_band = table.bands == b
        n_b = int(in_band.sum())
        acc = table.ids[in_band & (d == 1)]
        if acc.size == 0:
            excluded.append(b)
            continue
        w = Fraction(n_b, acc.size)
        for i in acc:
            weights[int(i)] = w
    return weights, excluded


class Augmentation(RejectInferenceEstimator):
    """Re-weight the accepted by inverse acceptance frequency within acceptance-score bands."""

    technique = "augmentation"

    def __init__(self, n_bands=20, lam=1.0, seed=0):
        self.n_bands = n_bands
        self.lam = lam
        self.seed = seed

    def fit(self, dataset, ids=None):
        ids, accepted, rejected = self._prepare(dataset, ids)
        if rejected.size == 0:
            self.weights_ = {int(i): Fraction(1) for i in accepted}
            self.excluded_bands_ = []
            model = self._fit_accepted(dataset, accepted, np.ones(len(accepted)))
            return self._finish(model, n_train=len(accepted), excluded_bands=[])
        decisions = dataset.decisions[ids]
        acceptance = fit_logistic(dataset, ids, None, self.lam, self.seed, labels=decisions)
        n_bands = min(self.n_bands, len(ids))
        table = make_bands(score_ids(acceptance, dataset, ids), n_bands, HIGH_FIRST, ids)
        weights, excluded = augmentation_weights(table, dict(zip(ids.tolist(), decisions.tolist())))
        if excluded:
            warnings.warn(f"augmentation: bands {excluded} have no accepted records; excluded",
                          stacklevel=2)
        train = np.array(sorted(weights), dtype=int)
        self.acceptance_model_ = acceptance
        self.weights_ = weights
        self.excluded_bands_ = excluded
        model = self._fit_accepted(dataset, train, [float(weights[i]) for i in train])
        return self._finish(model, n_train=len(train), excluded_bands=excluded)


@dataclass(frozen=True)
class ParcellingResult:
    labels: dict
    accepted_bad_rate: np.ndarray
    reject_bad_rate: np.ndarray
    rejects_per_band: np.ndarray
    bad_per_band: np.ndarray
    inherited_bands: tuple


def parcelling_labels(table, decisions, accepted_outcomes, kappa, rng):
    """Random per-band labelling of rejects.

    Bands are numbered from safest (1) to riskiest (B). Band b's accepted bad
    rate p_b is #defaults / #accepted; a band with no accepted records takes
    p from the nearest band with accepted records on the risky side, else on
    the safe side. Exactly round(min(1, kappa * p_b) * r_b) of the band's r_b
    rejects, chosen without replacement, are labelled 0; the rest 1.

    ``accepted_outcomes`` maps accepted ids to their outcome; rejects are
    never looked up.
    """
    if isinstance(decisions, dict):
        d = np.array([decisions[int(i)] for i in table.ids], dtype=int)
    else:
        d = np.asarray(decisions, dtype=int)
    B = table.n_bands
    p = np.full(B, np.nan)
    for b in range(1, B + 1):
        acc = table.ids[(table.bands == b) & (d == 1)]
        if acc.size:
            p[b - 1] = sum(accepted_outcomes[int(i)] == 0 for i in acc) / acc.size
    known = np.flatnonzero(~np.isnan(p))
    if known.size == 0:
        raise ValueError("parcelling needs at least one band with accepted records")
    inherited = []
    for j in np.flatnonzero(np.isnan(p)):
        riskier = known[known > j]
        p[j] = p[riskier[0]] if riskier.size else p[known[known < j][-1]]
        inherited.append(j + 1)
    q = np.minimum(1.0, kappa * p)
    labels = {}
    r = np.zeros(B, dtype=int)
    bad = np.zeros(B, dtype=int)
    for b in range(1, B + 1):
        rejects = np.sort(table.ids[(table.bands == b) & (d == 0)])
        r[b - 1] = rejects.size
        bad[b - 1] = round_half_up(q[b - 1] * rejects.size)
        chosen = set(rng.choice(rejects, bad[b - 1], replace=False).tolist()) if rejects.size else set()
        for i in rejects:
            labels[int(i)] = 0 if int(i) in chosen else 1
    return ParcellingResult(labels, p, q, r, bad, tuple(inherited))


class Parcelling(RejectInferenceEstimator):
    """Label rejects at random per default-score band at kappa times the accepted bad rate."""

    technique = "parcelling"

    def __init__(self, n_bands=20, kappa=2.0, lam=1.0, seed=0):
        self.n_bands = n_bands
        self.kappa = kappa
        self.lam = lam
        self.seed = seed

    def fit(self, dataset, ids=None):
        ids, accepted, rejected = self._prepare(dataset, ids)
        base = self._fit_accepted(dataset, accepted)
        if rejected.size == 0:
            return self._finish(base, n_train=len(accepted))
        rng = np.random.default_rng(self.seed)
        n_bands = min(self.n_bands, len(ids))
        table = make_bands(score_ids(base, dataset, ids), n_bands, HIGH_FIRST, ids)
        decisions = dict(zip(ids.tolist(), dataset.decisions[ids].tolist()))
        accepted_outcomes = dict(zip(accepted.tolist(), dataset.outcomes(accepted).tolist()))
        result = parcelling_labels(table, decisions, accepted_outcomes, self.kappa, rng)
        if result.inherited_bands:
            warnings.warn(f"parcelling: bands {list(result.inherited_bands)} have no accepted "
                          "records; bad rate inherited from a neighbour", stacklevel=2)
        self.parcelling_ = result
        train = np.concatenate([accepted, rejected])
        labels = np.concatenate([[accepted_outcomes[int(i)] for i in accepted],
                                 [result.labels[int(i)] for i in rejected]])
        model = fit_logistic(dataset, train, None, self.lam, self.seed, labels=labels)
        return self._finish(model, n_train=len(train))


@dataclass(frozen=True)
class ControlSample:
    ids: np.ndarray
    strategy: str
    band_populations: tuple = ()
    expected_counts: tuple = ()
    realized_counts: tuple = ()
    band_of: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.ids)


def harmonic_targets(m, populations):
    """Integer counts per band proportional to 1/n (band n = 1..B), capped at population.

    Largest-remainder apportionment; counts above a band's population are
    clipped and the overflow re-apportioned over the unsaturated bands in
    proportion to their 1/n weights, until nothing overflows.
    """
    populations = np.asarray(populations, dtype=int)
    if m > populations.sum():
        raise ValueError("sample larger than the banded population")
    weights = 1.0 / np.arange(1, len(populations) + 1)
    counts = np.zeros(len(populations), dtype=int)
    remaining = m
    open_ = populations > 0
    while remaining > 0:
        idx = np.flatnonzero(open_)
        share = largest_remainder(remaining, weights[idx])
        counts[idx] += share
        over = np.maximum(counts - populations, 0)
        counts -= over
        remaining = int(over.sum())
        open_ = counts < populations
    return counts


@dataclass(frozen=True)
class ControlPlan:
    """Fixed part of a control-group draw: candidate bands and per-band counts.

    ``ids`` are the candidate rejects grouped by band (band 1 first) and
    ``targets[b - 1]`` records are drawn from band b. GC1 is a single band.
    """

    ids: np.ndarray
    bands: np.ndarray
    targets: np.ndarray
    strategy: str

    @property
    def size(self):
        return int(self.targets.sum())

    @property
    def populations(self):
        return np.bincount(self.bands, minlength=len(self.targets) + 1)[1:]


def plan_control_group(ds, reject_ids, base_scores=None, strategy="GC1", fraction=0.30,
                       n_bands=20):
    """Band the rejects and fix the per-band sample counts.

    The sample size is round(fraction * M). ``GC1`` puts every reject in one
    band. ``GC2`` bands the rejects by ``base_scores`` (aligned with
    ``reject_ids``, or a mapping) into ``n_bands`` bands numbered from the
    highest score, with counts from :func:`harmonic_targets`; ``GC3`` numbers
    the bands from the lowest score. With fewer than ``n_bands`` rejects, one
    band per reject is used.
    """
    reject_ids = np.sort(np.asarray(reject_ids, dtype=int))
    if reject_ids.size == 0:
        raise ValueError("no rejects to sample from")
    if np.any(ds.decisions[reject_ids] != 0):
        raise ValueError("control-group candidates must be rejected records")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown control-group strategy {strategy!r}")
    if not 0 < fraction <= 1:
        raise ValueError("control fraction must lie in (0, 1]")
    M = reject_ids.size
    m = round_half_up(fraction * M)
    if m > M:
        raise ValueError("sample larger than the reject set")
    if strategy == "GC1":
        return ControlPlan(reject_ids, np.ones(M, dtype=int), np.array([m]), strategy)
    if base_scores is None:
        raise ValueError(f"{strategy} needs base scores for the rejects")
    if isinstance(base_scores, dict):
        base_scores = [base_scores[int(i)] for i in reject_ids]
    direction = HIGH_FIRST if strategy == "GC2" else LOW_FIRST
    table = make_bands(np.asarray(base_scores, dtype=float), min(n_bands, M), direction,
                       reject_ids)
    order = np.argsort(table.bands, kind="stable")
    return ControlPlan(table.ids[order], table.bands[order],
                       harmonic_targets(m, table.sizes()), strategy)


def draw_control_ids(plan, rng, size=None):
    """Uniform draw without replacement of ``plan.targets[b]`` records per band.

    Each record gets a uniform random key and the smallest keys of each band
    are kept. Returns the sorted sampled ids, or a ``(size, m)`` array of
    independent draws when ``size`` is given.
    """
    n = 1 if size is None else int(size)
    keys = rng.random((n, len(plan.ids)))
    starts = np.concatenate([[0], np.cumsum(plan.populations)[:-1]])
    picks = [s + np.argsort(keys[:, s:s + pop], axis=1, kind="stable")[:, :t]
             for s, pop, t in zip(starts, plan.populations, plan.targets) if t]
    taken = np.concatenate(picks, axis=1) if picks else np.zeros((n, 0), dtype=int)
    ids = np.sort(plan.ids[taken], axis=1)
    return ids[0] if size is None else ids


def sample_control_group(ds, reject_ids, base_scores=None, strategy="GC1", fraction=0.30,
                         n_bands=20, seed=0, rng=None):
    """Choose which rejects are granted credit as a control group.

    See :func:`plan_control_group` for the strategies and
    :func:`draw_control_ids` for the within-band draw.
    """
    plan = plan_control_group(ds, reject_ids, base_scores, strategy, fraction, n_bands)
    rng = np.random.default_rng(seed) if rng is None else rng
    chosen = draw_control_ids(plan, rng)
    if strategy == "GC1":
        return ControlSample(chosen, strategy)
    band_of = dict(zip(plan.ids.tolist(), plan.bands.tolist()))
    realized = np.bincount([band_of[int(i)] for i in chosen], minlength=len(plan.targets) + 1)[1:]
    return ControlSample(chosen, strategy, tuple(int(v) for v in plan.populations),
                         tuple(int(v) for v in plan.targets), tuple(int(v) for v in realized),
                         band_of)


def fit_control_sample(dataset, ids, sample, lam=1.0, seed=0):
    """Fit on the accepted in ``ids`` plus the revealed control sample."""
    ids = dataset.ids if ids is None else np.unique(np.asarray(ids, dtype=int))
    accepted = dataset.accepted_ids(ids)
    if len(sample) and not np.isin(sample.ids, ids).all():
        raise ValueError("control sample is not contained in the training ids")
    revealed = dataset.reveal(sample.ids) if len(sample) else dataset
    train = np.union1d(accepted, sample.ids)
    return fit_logistic(revealed, train, None, lam, seed)


class ControlGroup(RejectInferenceEstimator):
    """Grant credit to a sample of rejects, observe them, fit on accepted + sample.

    ``strategy`` picks the sampling scheme of :func:`sample_control_group`;
    GC2/GC3 band the rejects on the accepted-only score.
    """

    technique = "control_group"

    def __init__(self, strategy="GC1", fraction=0.30, n_bands=20, lam=1.0, seed=0):
        self.strategy = strategy
        self.fraction = fraction
        self.n_bands = n_bands
        self.lam = lam
        self.seed = seed

    def fit(self, dataset, ids=None):
        ids, accepted, rejected = self._prepare(dataset, ids)
        if rejected.size == 0:
            self.sample_ = ControlSample(np.zeros(0, dtype=int), self.strategy)
            model = self._fit_accepted(dataset, accepted)
            return self._finish(model, n_train=len(accepted), sample_ids=[])
        base_scores = None
        if self.strategy != "GC1":
            base = self._fit_accepted(dataset, accepted)
            base_scores = score_ids(base, dataset, rejected)
        sample = sample_control_group(dataset, rejected, base_scores, self.strategy,
                                      self.fraction, self.n_bands, self.seed)
        self.sample_ = sample
        model = fit_control_sample(dataset, ids, sample, self.lam, self.seed)
        return self._finish(model, n_train=len(accepted) + len(sample),
                            sample_ids=sample.ids.tolist())


def make_estimator(cfg):
    """Estimator for a :class:`TechniqueConfig`."""
    if cfg.technique == "extrapolation":
        return Extrapolation(cfg.lam, cfg.seed)
    if cfg.technique == "reclassification":
        return Reclassification(cfg.cutoff, cfg.lam, cfg.seed)
    if cfg.technique == "augmentation":
        return Augmentation(cfg.n_bands, cfg.lam, cfg.seed)
    if cfg.technique == "parcelling":
        return Parcelling(cfg.n_bands, cfg.kappa, cfg.lam, cfg.seed)
    return ControlGroup(cfg.strategy, cfg.fraction, cfg.n_bands, cfg.lam, cfg.seed)


def fit_extrapolation(ds, ids, cfg):
    return Extrapolation(cfg.lam, cfg.seed).fit(ds, ids).model_


def fit_reclassification(ds, ids, cfg):
    return Reclassification(cfg.cutoff, cfg.lam, cfg.seed).fit(ds, ids).model_


def fit_augmentation(ds, ids, cfg):
    return Augmentation(cfg.n_bands, cfg.lam, cfg.seed).fit(ds, ids).model_


def fit_parcelling(ds, ids, cfg):
    return Parcelling(cfg.n_bands, cfg.kappa, cfg.lam, cfg.seed).fit(ds, ids).model_


def fit_control_group(ds, ids, sample, cfg):
    return fit_control_sample(ds, ids, sample, cfg.lam, cfg.seed)

