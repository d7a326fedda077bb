"""Applicant populations with label-visibility auditing.

Outcomes of rejected applicants are stored (when known) but masked: reading
one through :meth:`Dataset.outcomes` is an audit failure unless the record
was revealed as part of a control group. Simulation and evaluation code that
legitimately needs the ground truth goes through :meth:`Dataset.true_outcomes`,
which only works on oracle datasets and is counted separately.
"""

import csv
import logging
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from ._util import format_float, largest_remainder, round_half_up

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
MASKED = -1


class DataError(ValueError):
    """Invalid or unusable input data."""


class SchemaError(DataError):
    """Columns or record layout do not match the expected schema."""


class ParseError(DataError):
    """A CSV cell could not be parsed; ``row`` is the 1-based data row number."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class MaskedOutcomeError(RuntimeError):
    """Attempt to read the outcome of a rejected, unrevealed applicant."""


class LabelAudit:
    """Thread-safe counters of outcome accesses.

    ``illegal_reads`` counts attempted reads of masked outcomes,
    ``unmask_events`` counts rejected records revealed through a control group
    and ``oracle_reads`` counts ground-truth reads by simulation/evaluation code.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.illegal_reads = 0
        self.unmask_events = 0
        self.oracle_reads = 0

    def _add(self, name, count):
        with self._lock:
            setattr(self, name, getattr(self, name) + int(count))

    def snapshot(self):
        with self._lock:
            return {
                "illegal_reads": self.illegal_reads,
                "unmask_events": self.unmask_events,
                "oracle_reads": self.oracle_reads,
            }

    def __repr__(self):
        return f"LabelAudit({self.snapshot()})"


#: Process-wide audit; every dataset also reports into it.
GLOBAL_AUDIT = LabelAudit()


@dataclass(frozen=True)
class Schema:
    names: tuple
    kinds: tuple

    def __post_init__(self):
        if len(self.names) != len(self.kinds):
            raise SchemaError("names and kinds differ in length")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate feature names")
        for kind in self.kinds:
            if kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"unknown feature kind {kind!r}")

    @property
    def k(self):
        return len(self.names)

    @property
    def categorical(self):
        return [n for n, kind in zip(self.names, self.kinds) if kind == CATEGORICAL]


@dataclass(frozen=True)
class GroundTruth:
    """True generating model of a synthetic dataset: logit = w.x + category effect + b."""

    numeric_names: tuple
    coef: np.ndarray
    categorical_name: str | None
    level_effects: dict
    intercept: float

    def logit(self, features):
        eta = features.loc[:, list(self.numeric_names)].to_numpy(float) @ self.coef
        if self.categorical_name is not None:
            eta = eta + features[self.categorical_name].map(self.level_effects).to_numpy(float)
        return eta + self.intercept

    def score(self, features):
        return expit(self.logit(features))


@dataclass(frozen=True)
class ApplicantRecord:
    id: int
    features: tuple
    decision: int
    _dataset: "Dataset" = field(repr=False, compare=False)

    @property
    def outcome(self):
        """Observed outcome; raises :class:`MaskedOutcomeError` for an unrevealed reject."""
        return int(self._dataset.outcomes([self.id])[0])


@dataclass(frozen=True)
class Split:
    name: str
    member_ids: np.ndarray
    stratified: bool = True

    def __len__(self):
        return len(self.member_ids)


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable applicant population.

    Parameters
    ----------
    features : DataFrame
        One row per applicant, columns in schema order. Record ids are the
        positional row indices ``0..n-1``.
    decisions : array-like of {0, 1}
        1 = accepted, 0 = rejected.
    outcomes : array-like of {0, 1, -1}
        1 = no default, 0 = default, -1 = unknown. Accepted records must have
        a known outcome.
    schema : Schema, optional
        Inferred from the frame's dtypes when omitted.
    weights : array-like, optional
        Positive per-record weights, default 1.0.
    """

    def __init__(self, features, decisions, outcomes, schema=None, weights=None,
                 truth=None, revealed=None, audit=None):
        features = pd.DataFrame(features).reset_index(drop=True)
        if schema is None:
            schema = infer_schema(features)
        if tuple(features.columns) != schema.names:
            raise SchemaError("feature columns do not match the schema")
        n = len(features)
        decisions = np.asarray(decisions).astype(np.int8)
        outcomes = np.asarray(outcomes).astype(np.int8)
        if decisions.shape != (n,) or outcomes.shape != (n,):
            raise SchemaError("decisions and outcomes must have one entry per record")
        if not np.isin(decisions, (0, 1)).all():
            raise DataError("decisions must be 0 or 1")
        if not np.isin(outcomes, (MASKED, 0, 1)).all():
            raise DataError("outcomes must be 0, 1 or unknown")
        if np.any((decisions == 1) & (outcomes == MASKED)):
            bad = int(np.flatnonzero((decisions == 1) & (outcomes == MASKED))[0])
            raise DataError(f"accepted record {bad} has no outcome")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,) or not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise DataError("weights must be finite and > 0, one per record")
        self._features = features
        self._decisions = _readonly(decisions)
        self._outcomes = _readonly(outcomes)
        self._weights = _readonly(weights)
        self._revealed = frozenset() if revealed is None else frozenset(int(i) for i in revealed)
        self.schema = schema
        self.truth = truth
        self.audit = LabelAudit() if audit is None else audit

    # -- shape -----------------------------------------------------------
    def __len__(self):
        return len(self._features)

    def __repr__(self):
        return (f"Dataset(n={len(self)}, k={self.k}, n_accepted={self.n_accepted}, "
                f"n_rejected={self.n_rejected}, oracle_mode={self.oracle_mode})")

    @property
    def n(self):
        return len(self)

    @property
    def k(self):
        return self.schema.k

    @property
    def ids(self):
        return np.arange(len(self))

    @property
    def features(self):
        return self._features

    @property
    def decisions(self):
        return self._decisions

    @property
    def weights(self):
        return self._weights

    @property
    def n_accepted(self):
        return int(self._decisions.sum())

    @property
    def n_rejected(self):
        return len(self) - self.n_accepted

    @property
    def oracle_mode(self):
        return bool(np.all(self._outcomes != MASKED))

    @property
    def revealed_ids(self):
        return np.array(sorted(self._revealed), dtype=int)

    def _ids(self, ids):
        if ids is None:
            return self.ids
        ids = np.asarray(ids, dtype=int).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise IndexError("record id out of range")
        return ids

    def accepted_ids(self, ids=None):
        ids = self._ids(ids)
        return np.sort(ids[self._decisions[ids] == 1])

    def rejected_ids(self, ids=None):
        ids = self._ids(ids)
        return np.sort(ids[self._decisions[ids] == 0])

    # -- outcome access --------------------------------------------------
    def is_visible(self, ids=None):
        ids = self._ids(ids)
        visible = self._decisions[ids] == 1
        if self._revealed:
            visible |= np.fromiter((i in self._revealed for i in ids), bool, len(ids))
        return visible

    def outcomes(self, ids=None):
        """Observed outcomes; every masked id read is an audit failure."""
        ids = self._ids(ids)
        hidden = ~self.is_visible(ids)
        if hidden.any():
            count = int(hidden.sum())
            self.audit._add("illegal_reads", count)
            GLOBAL_AUDIT._add("illegal_reads", count)
            raise MaskedOutcomeError(
                f"{count} masked outcome(s) read, first id {int(ids[hidden][0])}")
        return self._outcomes[ids].astype(int)

    def true_outcomes(self, ids=None):
        """Ground-truth outcomes for simulation and evaluation (oracle datasets only)."""
        if not self.oracle_mode:
            raise DataError("ground-truth outcomes need an oracle-mode dataset")
        ids = self._ids(ids)
        self.audit._add("oracle_reads", len(ids))
        GLOBAL_AUDIT._add("oracle_reads", len(ids))
        return self._outcomes[ids].astype(int)

    def reveal(self, ids):
        """Return a view in which ``ids`` have observable outcomes (control group).

        The view shares this dataset's audit. Each rejected record revealed for
        the first time counts one unmask event.
        """
        ids = self._ids(ids)
        missing = ids[self._outcomes[ids] == MASKED]
        if missing.size:
            raise DataError(f"outcome unavailable for record {int(missing[0])}")
        new = {int(i) for i in ids if self._decisions[i] == 0 and int(i) not in self._revealed}
        self.audit._add("unmask_events", len(new))
        GLOBAL_AUDIT._add("unmask_events", len(new))
        return Dataset(self._features, self._decisions, self._outcomes, self.schema,
                       self._weights, self.truth, self._revealed | new, self.audit)

    def record(self, i):
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError("record id out of range")
        return ApplicantRecord(i, tuple(self._features.iloc[i]), int(self._decisions[i]), self)

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    # -- derivation ------------------------------------------------------
    def with_decisions(self, decisions):
        """New dataset with the same features and outcomes, different decisions."""
        return Dataset(self._features, decisions, self._outcomes, self.schema,
                       self._weights, self.truth)

    def with_weights(self, weights):
        return Dataset(self._features, self._decisions, self._outcomes, self.schema,
                       weights, self.truth, self._revealed, self.audit)

    def to_csv(self, path, outcome="outcome", decision="decision", oracle_export=False):
        """Write features, decision and outcome columns.

        Outcomes that are not visible are written empty unless ``oracle_export``.
        """
        visible = self.is_visible()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(self.schema.names) + [decision, outcome])
            numeric = [kind == NUMERIC for kind in self.schema.kinds]
            for i, row in enumerate(self._features.itertuples(index=False, name=None)):
                cells = [format_float(v) if num else str(v) for v, num in zip(row, numeric)]
                y = int(self._outcomes[i])
                shown = y != MASKED and (visible[i] or oracle_export)
                writer.writerow(cells + [int(self._decisions[i]), y if shown else ""])


def infer_schema(frame, categorical=()):
    categorical = set(categorical)
    kinds = []
    for name in frame.columns:
        numeric = pd.api.types.is_numeric_dtype(frame[name]) and not pd.api.types.is_bool_dtype(frame[name])
        kinds.append(NUMERIC if numeric and name not in categorical else CATEGORICAL)
    return Schema(tuple(frame.columns), tuple(kinds))


def load_csv(path, outcome="outcome", decision=None, features=None, categorical=()):
    """Load applicants from a UTF-8 CSV with a header row.

    ``outcome`` names the outcome column (1 = no default, 0 = default, empty =
    unknown, allowed only for rejected rows). ``decision`` names the optional
    decision column; without it every row is accepted. Feature columns are
    ``features`` or, by default, every other column. A column is numeric when
    every cell parses as a float, unless listed in ``categorical``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    for col in [outcome] + ([decision] if decision else []):
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    if features is None:
        features = [h for h in header if h not in (outcome, decision)]
    for col in features:
        if col not in header:
            raise SchemaError(f"missing feature column {col!r}")
    if not features:
        raise SchemaError("no feature columns")
    index = {h: j for j, h in enumerate(header)}

    def binary(token, name, row, allow_empty):
        token = token.strip()
        if token in ("0", "1"):
            return int(token)
        if token == "" and allow_empty:
            return MASKED
        raise ParseError(f"{name} value {token!r} is not 0/1", row)

    decisions, outcomes, cells = [], [], {c: [] for c in features}
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", r)
        d = binary(row[index[decision]], decision, r, False) if decision else 1
        y = binary(row[index[outcome]], outcome, r, True)
        if d == 1 and y == MASKED:
            raise ParseError("accepted row has an empty outcome", r)
        decisions.append(d)
        outcomes.append(y)
        for c in features:
            value = row[index[c]].strip()
            if value == "":
                raise ParseError(f"missing value in column {c!r}", r)
            cells[c].append(value)

    columns, kinds = {}, []
    for c in features:
        values = cells[c]
        if c not in categorical:
            try:
                parsed = np.array([float(v) for v in values])
            except ValueError:
                parsed = None
            if parsed is not None:
                if not np.all(np.isfinite(parsed)):
                    bad = int(np.flatnonzero(~np.isfinite(parsed))[0]) + 1
                    raise ParseError(f"non-finite value in numeric column {c!r}", bad)
                columns[c] = parsed
                kinds.append(NUMERIC)
                continue
        columns[c] = np.array(values, dtype=object)
        kinds.append(CATEGORICAL)
    frame = pd.DataFrame(columns, columns=features)
    return Dataset(frame, decisions, outcomes, Schema(tuple(features), tuple(kinds)))


# Linear-predictor standard deviation of the synthetic generator.
SYNTHETIC_SIGNAL_SD = 2.0
SYNTHETIC_LEVELS = ("A", "B", "C")


def _calibrate_intercept(eta, target, tol=1e-13):
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(eta + mid).mean() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def generate_synthetic(n, k, target_good_rate, seed):
    """Synthetic applicants with known logistic ground truth.

    Feature mix: ``k`` standard-normal numeric columns ``num_00..``, except
    that for ``k >= 5`` the last column is ``cat_00``, a uniform 3-level
    categorical (levels A, B, C). The true logit is ``w.x + e[level] + b`` with
    ``w`` and the level effects ``e`` drawn from N(0, 1) using ``seed`` alone
    (before any record is drawn), centred, and jointly rescaled so the linear
    predictor has standard deviation 2. The intercept ``b`` is found by
    bisection so that the mean true good probability over the drawn records
    equals ``target_good_rate``. Outcomes are Bernoulli draws; every record
    is accepted and the generating model is kept in ``Dataset.truth``.
    """
    if not 0 < target_good_rate < 1:
        raise DataError("target_good_rate must lie in (0, 1)")
    if n < 10 or k < 1:
        raise DataError("need n >= 10 and k >= 1")
    rng = np.random.default_rng(seed)
    n_cat = 1 if k >= 5 else 0
    n_num = k - n_cat
    coef = rng.standard_normal(n_num)
    effects = rng.standard_normal(len(SYNTHETIC_LEVELS)) if n_cat else np.zeros(0)
    effects = effects - effects.mean() if n_cat else effects
    variance = coef @ coef + (effects @ effects / len(effects) if n_cat else 0.0)
    scale = SYNTHETIC_SIGNAL_SD / np.sqrt(variance)
    coef, effects = coef * scale, effects * scale

    numeric_names = tuple(f"num_{j:02d}" for j in range(n_num))
    columns = dict(zip(numeric_names, rng.standard_normal((n, n_num)).T))
    cat_name = None
    level_effects = {}
    if n_cat:
        cat_name = "cat_00"
        columns[cat_name] = np.array(SYNTHETIC_LEVELS, dtype=object)[rng.integers(0, 3, n)]
        level_effects = dict(zip(SYNTHETIC_LEVELS, effects.tolist()))
    frame = pd.DataFrame(columns)
    names = numeric_names + ((cat_name,) if cat_name else ())
    schema = Schema(names, (NUMERIC,) * n_num + ((CATEGORICAL,) if cat_name else ()))

    truth = GroundTruth(numeric_names, coef, cat_name, level_effects, 0.0)
    eta = truth.logit(frame)
    b = _calibrate_intercept(eta, target_good_rate)
    truth = GroundTruth(numeric_names, coef, cat_name, level_effects, float(b))
    outcomes = (rng.random(n) < expit(eta + b)).astype(np.int8)
    return Dataset(frame, np.ones(n, dtype=np.int8), outcomes, schema, truth=truth)


def _three_bins(values, kind):
    """Equal-frequency tertiles (numeric) or top-2 levels + rest (categorical)."""
    n = len(values)
    if kind == NUMERIC:
        order = np.lexsort((np.arange(n), np.asarray(values, dtype=float)))
        bins = np.empty(n, dtype=int)
        bins[order] = (3 * np.arange(n)) // n
        return bins
    levels = pd.Series(values).value_counts(sort=True)
    first_seen = {v: j for j, v in enumerate(pd.unique(np.asarray(values, dtype=object)))}
    ranked = sorted(levels.index, key=lambda v: (-levels[v], first_seen[v]))
    code = {v: min(j, 2) for j, v in enumerate(ranked)}
    return np.array([code[v] for v in values], dtype=int)


@dataclass(frozen=True)
class Segmentation:
    features: tuple
    association: dict
    labels: np.ndarray
    default_rates: dict
    worst: int


def coarse_segmentation(ds):
    """Cross-bin the two features most associated with default.

    Each feature is cut into 3 bins; its association with default is the
    spread (max - min) of bin default rates. The top two features (ties by
    column order) are crossed into at most 9 segments, labelled
    ``3 * bin_first + bin_second``. Uses ground-truth outcomes.
    """
    y = ds.true_outcomes()
    bad = (y == 0).astype(float)
    frame = ds.features
    binned, association = {}, {}
    for name, kind in zip(ds.schema.names, ds.schema.kinds):
        bins = _three_bins(frame[name].to_numpy(), kind)
        rates = [bad[bins == b].mean() for b in np.unique(bins)]
        binned[name] = bins
        association[name] = float(max(rates) - min(rates)) if len(rates) > 1 else 0.0
    ranked = sorted(ds.schema.names, key=lambda c: -association[c])
    chosen = tuple(ranked[:2])
    labels = binned[chosen[0]] * 3
    if len(chosen) > 1:
        labels = labels + binned[chosen[1]]
    rates = {int(s): float(bad[labels == s].mean()) for s in np.unique(labels)}
    if len(rates) < 2:
        raise DataError("degenerate segmentation: fewer than two segments")
    worst = min(rates, key=lambda s: (-rates[s], s))
    return Segmentation(chosen, association, labels, rates, worst)


def simulate_rejection(ds, target_reject_rate, seed, outside_fraction=0.10):
    """Mark a selection-biased set of applicants as rejected.

    The highest-default segment of :func:`coarse_segmentation` is rejected,
    plus a random ``outside_fraction`` of that segment's size drawn from the
    rest of the population. The reject set is then subsampled, or topped up
    from the accepted, uniformly at random to exactly
    ``round(target_reject_rate * n)`` records. Outcomes are kept (masked).
    """
    if not ds.oracle_mode:
        raise DataError("rejection simulation needs ground-truth outcomes")
    if not 0 < target_reject_rate < 0.5:
        raise DataError("target_reject_rate must lie in (0, 0.5)")
    n = len(ds)
    target = round_half_up(target_reject_rate * n)
    if target < 1:
        raise DataError("target reject count rounds to zero")
    rng = np.random.default_rng(seed)
    seg = coarse_segmentation(ds)
    inside = np.flatnonzero(seg.labels == seg.worst)
    outside = np.flatnonzero(seg.labels != seg.worst)
    extra = min(round_half_up(outside_fraction * len(inside)), len(outside))
    pool = np.concatenate([inside, rng.choice(outside, extra, replace=False)])
    if len(pool) >= target:
        rejected = rng.choice(np.sort(pool), target, replace=False)
    else:
        rest = np.setdiff1d(ds.ids, pool)
        rejected = np.concatenate([pool, rng.choice(rest, target - len(pool), replace=False)])
    decisions = np.ones(n, dtype=np.int8)
    decisions[rejected] = 0
    logger.debug("rejected %d records; worst segment %d of size %d", target, seg.worst, len(inside))
    return ds.with_decisions(decisions)


def _interleave(sizes):
    """Label sequence of length sum(sizes) spreading each label evenly."""
    sizes = np.asarray(sizes)
    n = int(sizes.sum())
    assigned = np.zeros(len(sizes), dtype=int)
    labels = np.empty(n, dtype=int)
    for i in range(n):
        deficit = sizes * (i + 1) / n - assigned
        deficit[assigned >= sizes] = -np.inf
        j = int(np.argmax(deficit))
        labels[i] = j
        assigned[j] += 1
    return labels


def split(ds, fractions, seed, ids=None, names=None, stratify=True):
    """Partition ``ids`` (default: all) into disjoint splits.

    Sizes are the largest-remainder apportionment of ``len(ids) * fraction``.
    Stratification is by (decision, outcome when visible): records are grouped
    by stratum, shuffled within stratum, and dealt along an evenly interleaved
    label sequence so each stratum's share matches to within rounding. When
    some stratum has fewer records than there are splits, the split is
    unstratified and each :class:`Split` carries ``stratified=False``.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)!r}, not 1")
    if names is None:
        names = [f"split{j}" for j in range(len(fractions))]
    if len(names) != len(fractions):
        raise ValueError("one name per fraction")
    ids = np.sort(ds._ids(ids))
    sizes = largest_remainder(len(ids), fractions)
    rng = np.random.default_rng(seed)

    visible = ds.is_visible(ids)
    strata_key = np.where(visible, 0, 2) + ds.decisions[ids] * 4
    if visible.any():
        strata_key[visible] += ds.outcomes(ids[visible])
    strata, counts = np.unique(strata_key, return_counts=True)
    stratified = stratify and counts.min() >= len(fractions)
    if stratify and not stratified:
        warnings.warn("a stratum is smaller than the number of splits; splitting unstratified",
                      stacklevel=2)
    if stratified:
        ordered = np.concatenate([rng.permutation(ids[strata_key == s]) for s in strata])
    else:
        ordered = rng.permutation(ids)
    labels = _interleave(sizes)
    return [Split(name, _readonly(np.sort(ordered[labels == j])), bool(stratified))
            for j, name in enumerate(names)]
