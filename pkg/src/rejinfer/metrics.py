"""Global ranking indicators and the local default-rate-among-accepted metric.

Scores estimate P(y = 1), the probability of *no* default, so a higher score
means a safer applicant. Wherever records are ranked, ties in score are
broken by ascending record id (``ids`` defaults to positions 0..n-1).
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._util import format_float, top_count
from .scoring import LOW_FIRST, make_bands


def _check_binary(scores, outcomes, need_both=True):
    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes).astype(int)
    if scores.shape != outcomes.shape or scores.ndim != 1:
        raise ValueError("scores and outcomes must be 1-D and aligned")
    if scores.size == 0:
        raise ValueError("empty evaluation set")
    if not np.isin(outcomes, (0, 1)).all():
        raise ValueError("outcomes must be 0 or 1")
    if need_both and len(np.unique(outcomes)) < 2:
        raise ValueError("both classes are required")
    return scores, outcomes


def _descending_order(scores, ids):
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids, dtype=int)
    return np.lexsort((ids, -scores))


def roc_auc(scores, outcomes):
    """P(score of a random y=1 > score of a random y=0), ties counted 1/2.

    Computed from mid-ranks (Mann-Whitney), O(n log n).
    """
    scores, outcomes = _check_binary(scores, outcomes)
    ranks = rankdata(scores)
    pos = outcomes == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    return (ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)


def ks_statistic(scores, outcomes):
    """max_t |F1(t) - F0(t)| over observed scores t, F = class-conditional CDF."""
    scores, outcomes = _check_binary(scores, outcomes)
    thresholds = np.unique(scores)
    pos = np.sort(scores[outcomes == 1])
    neg = np.sort(scores[outcomes == 0])
    cdf_pos = np.searchsorted(pos, thresholds, side="right") / len(pos)
    cdf_neg = np.searchsorted(neg, thresholds, side="right") / len(neg)
    return float(np.max(np.abs(cdf_pos - cdf_neg)))


def ki_from_auc(auc):
    return 2.0 * auc - 1.0


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("empty acceptance grid")
    if np.any(grid <= 0) or np.any(grid > 1) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing within (0, 1]")
    return grid


@dataclass(frozen=True)
class LiftCurve:
    """Share of target records captured in the top ``a`` fraction, for each ``a`` in grid."""

    grid: np.ndarray
    values: np.ndarray
    n: int
    n_target: int

    @property
    def prevalence(self):
        return self.n_target / self.n

    def perfect(self):
        """Values of the ideal ranking on the same population."""
        counts = np.array([top_count(a, self.n) for a in self.grid])
        return np.minimum(counts, self.n_target) / self.n_target


def lift_curve(scores, outcomes, grid, target_class=1, ids=None):
    """Cumulative capture of ``target_class`` when accepting the top ``ceil(a*n)``.

    Records are ranked by descending score for target class 1 and by
    ascending score for target class 0 (riskiest first); ties by ascending id.
    """
    scores, outcomes = _check_binary(scores, outcomes, need_both=False)
    grid = _check_grid(grid)
    hit = outcomes == target_class
    if not hit.any():
        raise ValueError("target class absent")
    order = _descending_order(scores if target_class == 1 else -scores, ids)
    captured = np.cumsum(hit[order])
    counts = np.array([top_count(a, len(scores)) for a in grid])
    return LiftCurve(grid, captured[counts - 1] / hit.sum(), len(scores), int(hit.sum()))


def kr(lift_estimation, lift_validation):
    """Robustness from the gap between estimation and validation lift curves.

    KR = 1 - mean|L_est - L_val| / mean(L_perfect_est - a), clamped to [0, 1].
    """
    if not np.array_equal(lift_estimation.grid, lift_validation.grid):
        raise ValueError("lift curves use different grids")
    gap = np.mean(np.abs(lift_estimation.values - lift_validation.values))
    room = np.mean(lift_estimation.perfect() - lift_estimation.grid)
    if room <= 0:
        raise ValueError("estimation lift has no room above the diagonal")
    return float(min(1.0, max(0.0, 1.0 - gap / room)))


def banded_gini(scores, outcomes, n_bands=20, ids=None):
    """Accuracy ratio of the CAP curve sampled at ``n_bands`` equal-frequency bands.

    Applicants are ranked riskiest first; the CAP curve joins (population
    share, default share) at band boundaries. The ratio compares the area
    between that curve and the diagonal with the same area for a perfect
    ranking, (1 - default prevalence) / 2.
    """
    scores, outcomes = _check_binary(scores, outcomes)
    table = make_bands(scores, n_bands, LOW_FIRST, np.arange(len(scores)) if ids is None else ids)
    keys = np.arange(len(scores)) if ids is None else np.asarray(ids, dtype=int)
    lookup = {int(k): j for j, k in enumerate(keys)}
    position = np.array([lookup[int(k)] for k in table.ids])
    bad = (outcomes[position] == 0).astype(float)
    sizes = table.sizes()
    bad_per_band = np.bincount(table.bands, weights=bad, minlength=n_bands + 1)[1:]
    x = np.concatenate([[0.0], np.cumsum(sizes) / len(scores)])
    y = np.concatenate([[0.0], np.cumsum(bad_per_band) / bad.sum()])
    area = np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2)
    prevalence = bad.sum() / len(scores)
    return float((area - 0.5) / ((1 - prevalence) / 2))


@dataclass(frozen=True)
class GlobalIndicators:
    auc: float
    ks: float
    gini: float | None
    ki: float
    classification_rate: float
    n: int

    @property
    def gini_omitted(self):
        return self.gini is None

    def items(self):
        out = [("AUC", self.auc), ("KS", self.ks)]
        if self.gini is not None:
            out.append(("GINI", self.gini))
        out += [("KI", self.ki), ("ClassificationRate", self.classification_rate)]
        return out


def global_indicators(scores, outcomes, n_bands=20, ids=None):
    """AUC, KS, banded GINI, KI = 2*AUC - 1 and the classification rate at cutoff 0.5.

    GINI is ``None`` when there are fewer records than bands.
    """
    scores, outcomes = _check_binary(scores, outcomes)
    auc = roc_auc(scores, outcomes)
    gini = banded_gini(scores, outcomes, n_bands, ids) if len(scores) >= n_bands else None
    rate = float(np.mean((scores >= 0.5).astype(int) == outcomes))
    return GlobalIndicators(float(auc), ks_statistic(scores, outcomes), gini,
                            float(ki_from_auc(auc)), rate, len(scores))


def default_rate_among_accepted(scores, outcomes, a, ids=None):
    """Default rate among the top ``ceil(a*n)`` scores and its binomial standard error."""
    if not 0 < a <= 1:
        raise ValueError("acceptance rate must lie in (0, 1]")
    curve = default_rate_curve(scores, outcomes, [a], ids)
    return float(curve.rates[0]), float(curve.std_errors[0])


@dataclass(frozen=True)
class DefaultRateCurve:
    grid: np.ndarray
    rates: np.ndarray
    std_errors: np.ndarray
    n_accepted: np.ndarray

    def at(self, a, tol=1e-9):
        hit = np.flatnonzero(np.abs(self.grid - a) <= tol)
        if hit.size == 0:
            raise KeyError(f"acceptance rate {a} not on the curve grid")
        return float(self.rates[hit[0]]), float(self.std_errors[hit[0]])


def default_rate_curve(scores, outcomes, grid, ids=None):
    scores, outcomes = _check_binary(scores, outcomes, need_both=False)
    grid = _check_grid(grid)
    order = _descending_order(scores, ids)
    defaults = np.cumsum(outcomes[order] == 0)
    m = np.array([top_count(a, len(scores)) for a in grid])
    rates = defaults[m - 1] / m
    se = np.sqrt(rates * (1 - rates) / m)
    return DefaultRateCurve(grid, rates, se, m)


@dataclass(frozen=True)
class MetricsReport:
    """Indicators of one model on its estimation and validation sets.

    ``restricted`` marks evaluation limited to records with observed outcomes.
    """

    model: str
    estimation: GlobalIndicators
    validation: GlobalIndicators
    kr: float
    validation_curve: DefaultRateCurve
    restricted: bool = False

    def indicator_rows(self):
        for set_name, ind in (("A1-estimation", self.estimation),
                              ("A1-validation", self.validation)):
            for name, value in ind.items():
                yield self.model, set_name, name, value
        yield self.model, "A1-estimation/A1-validation", "KR", self.kr


def curve_rows(model, set_name, curve):
    for a, rate, se, m in zip(curve.grid, curve.rates, curve.std_errors, curve.n_accepted):
        yield model, set_name, a, rate, se, int(m)


def format_row(row):
    return [format_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row]


def binomial_overlap(rates, std_errors, width=2.0):
    """True when every rate lies inside every other rate's +-width*SE band."""
    rates = np.asarray(rates, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    gaps = np.abs(rates[:, None] - rates[None, :])
    return bool(np.all(gaps <= width * se[:, None] + 1e-15))


__all__ = [
    "roc_auc", "ks_statistic", "ki_from_auc", "LiftCurve", "lift_curve", "kr", "banded_gini",
    "GlobalIndicators", "global_indicators", "default_rate_among_accepted", "DefaultRateCurve",
    "default_rate_curve", "MetricsReport", "curve_rows", "binomial_overlap",
]
