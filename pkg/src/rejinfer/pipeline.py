"""End-to-end comparison of reject-inference techniques.

The population is split into A1 (model building) and A2 (a later period).
A1 is split again into estimation and validation sets. Every technique is
fitted on A1-estimation and evaluated on both A1 sets; the technique with the
lowest default rate among accepted at the operating acceptance rate on
A1-validation is selected, and all techniques are scored on A2.
"""

import csv
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._util import derive_seed, format_float
from .dataset import DataError, generate_synthetic, load_csv, simulate_rejection, split
from .metrics import (
    MetricsReport, curve_rows, default_rate_curve, format_row, global_indicators, kr, lift_curve,
)
from .reject_inference import TechniqueConfig, make_estimator
from .scoring import score_ids

logger = logging.getLogger(__name__)

#: Model labels used in the experiments, mapped to technique settings.
TECHNIQUE_ALIASES = {
    "M1": dict(technique="extrapolation"),
    "M2": dict(technique="augmentation"),
    "M3": dict(technique="control_group", strategy="GC1"),
    "M4": dict(technique="control_group", strategy="GC2"),
    "M5": dict(technique="control_group", strategy="GC3"),
    "extrapolation": dict(technique="extrapolation"),
    "reclassification": dict(technique="reclassification"),
    "augmentation": dict(technique="augmentation"),
    "parcelling": dict(technique="parcelling"),
    "GC1": dict(technique="control_group", strategy="GC1"),
    "GC2": dict(technique="control_group", strategy="GC2"),
    "GC3": dict(technique="control_group", strategy="GC3"),
}

DEFAULT_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str | None = None
    outcome_column: str = "outcome"
    decision_column: str | None = None
    categorical: tuple = ()
    synth_n: int = 6000
    synth_k: int = 30
    synth_good_rate: float = 0.9
    reject_rate: float | None = 0.05
    reject_outside_fraction: float = 0.10
    a1_fraction: float = 0.7
    estimation_fraction: float = 2 / 3
    stratify: bool = True
    techniques: tuple = ("M1", "M2", "M3", "M4", "M5")
    lam: float = 1.0
    n_bands: int = 20
    cutoff: float | str = 0.5
    kappa: float = 2.0
    control_fraction: float = 0.30
    operating_a: float = 0.8
    grid: tuple = DEFAULT_GRID
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("a1_fraction", "estimation_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.techniques:
            raise ValueError("technique list is empty")
        if len(set(self.techniques)) != len(self.techniques):
            raise ValueError("duplicate technique tags")
        for tag in self.techniques:
            if tag not in TECHNIQUE_ALIASES:
                raise ValueError(f"unknown technique {tag!r}")
        grid = np.asarray(self.grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0) or np.any(grid > 1) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing within (0, 1]")
        if not np.any(np.abs(grid - self.operating_a) <= 1e-9):
            raise ValueError(f"operating rate {self.operating_a} is not on the grid")
        if self.reject_rate is not None and not 0 < self.reject_rate < 0.5:
            raise ValueError("reject rate must lie in (0, 0.5)")

    def technique_config(self, tag):
        """Per-technique settings; the seed is derived from (master seed, tag)."""
        return TechniqueConfig(n_bands=self.n_bands, cutoff=self.cutoff, kappa=self.kappa,
                               fraction=self.control_fraction, lam=self.lam,
                               seed=derive_seed(self.seed, tag), **TECHNIQUE_ALIASES[tag])


@dataclass
class TechniqueResult:
    tag: str
    config: TechniqueConfig
    estimator: object
    metrics: MetricsReport
    a2_curve: object
    train_ids: np.ndarray = field(repr=False)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: list
    selected: str
    selection_value: float
    selection_std_error: float
    oracle_mode: bool
    a2_restricted: bool
    splits: dict = field(repr=False)
    audit: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def result(self, tag):
        for r in self.results:
            if r.tag == tag:
                return r
        raise KeyError(tag)

    @property
    def selected_a2_curve(self):
        return self.result(self.selected).a2_curve


def select_best_model(curves, operating_a, tol=1e-12):
    """Tag with the lowest default rate at ``operating_a``.

    ``curves`` is an ordered mapping tag -> DefaultRateCurve (or MetricsReport);
    differences below ``tol`` are ties, resolved by order.
    """
    best_tag, best_rate = None, None
    for tag, curve in curves.items():
        if isinstance(curve, MetricsReport):
            curve = curve.validation_curve
        try:
            rate, _ = curve.at(operating_a)
        except KeyError:
            raise ValueError(f"curve of {tag!r} has no point at {operating_a}") from None
        if best_rate is None or rate < best_rate - tol:
            best_tag, best_rate = tag, rate
    if best_tag is None:
        raise ValueError("no curves to select from")
    return best_tag


def _evaluation_view(ds, ids):
    """Ids and outcomes to evaluate on: all records in oracle mode, else the visible ones."""
    ids = np.asarray(ids, dtype=int)
    if ds.oracle_mode:
        return ids, ds.true_outcomes(ids), False
    visible = ids[ds.is_visible(ids)]
    return visible, ds.outcomes(visible), True


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def load_data(cfg):
    if cfg.data_path is not None:
        return load_csv(cfg.data_path, cfg.outcome_column, cfg.decision_column,
                        categorical=cfg.categorical)
    return generate_synthetic(cfg.synth_n, cfg.synth_k, cfg.synth_good_rate,
                              derive_seed(cfg.seed, "synthetic"))


def _fit_and_evaluate(ds, tag, cfg, est_ids, val_ids, a2_ids):
    tcfg = cfg.technique_config(tag)
    estimator = make_estimator(tcfg).fit(ds, est_ids)
    model = estimator.model_
    train_ids = _training_ids(ds, est_ids, estimator)
    indicators, lifts, curve = {}, {}, None
    restricted = False
    for set_name, ids in (("estimation", est_ids), ("validation", val_ids)):
        eval_ids, y, flag = _evaluation_view(ds, ids)
        restricted |= flag
        scores = score_ids(model, ds, eval_ids)
        indicators[set_name] = global_indicators(scores, y, cfg.n_bands, eval_ids)
        lifts[set_name] = lift_curve(scores, y, cfg.grid, 1, eval_ids)
        if set_name == "validation":
            curve = default_rate_curve(scores, y, cfg.grid, eval_ids)
    metrics = MetricsReport(tag, indicators["estimation"], indicators["validation"],
                            kr(lifts["estimation"], lifts["validation"]), curve, restricted)
    a2_eval, a2_y, _ = _evaluation_view(ds, a2_ids)
    a2_curve = default_rate_curve(score_ids(model, ds, a2_eval), a2_y, cfg.grid, a2_eval)
    return TechniqueResult(tag, tcfg, estimator, metrics, a2_curve, train_ids)


def _training_ids(ds, est_ids, estimator):
    """Ids whose features entered the final fit (or the acceptance model)."""
    if estimator.technique == "extrapolation":
        return ds.accepted_ids(est_ids)
    return np.asarray(est_ids, dtype=int)


def run_experiment(cfg):
    """Run the full comparison and return an :class:`ExperimentReport`.

    Seeds: synthetic data, rejection simulation and the two splits use seeds
    derived from the master seed and the stage name; each technique uses one
    derived from the master seed and its tag, so results do not depend on
    the order or parallelism of the fits.
    """
    timings = {}
    t0 = time.perf_counter()
    ds = _stage("load", load_data, cfg)
    if cfg.reject_rate is not None:
        ds = _stage("simulate_rejection", simulate_rejection, ds, cfg.reject_rate,
                    derive_seed(cfg.seed, "reject"), cfg.reject_outside_fraction)
    timings["data"] = time.perf_counter() - t0

    a1, a2 = _stage("split", split, ds, [cfg.a1_fraction, 1 - cfg.a1_fraction],
                    derive_seed(cfg.seed, "split/A1-A2"), names=["A1", "A2"],
                    stratify=cfg.stratify)
    est, val = _stage("split", split, ds, [cfg.estimation_fraction, 1 - cfg.estimation_fraction],
                      derive_seed(cfg.seed, "split/estimation-validation"),
                      ids=a1.member_ids, names=["A1-estimation", "A1-validation"],
                      stratify=cfg.stratify)
    for s in (a2, est, val):
        if not ds.oracle_mode:
            visible = s.member_ids[ds.is_visible(s.member_ids)]
            if len(np.unique(ds.outcomes(visible))) < 2:
                raise StageError("split", DataError(f"{s.name} has a single observed class"))
        elif len(np.unique(ds.true_outcomes(s.member_ids))) < 2:
            raise StageError("split", DataError(f"{s.name} has a single class"))

    t1 = time.perf_counter()

    def job(tag):
        return _stage(f"fit:{tag}", _fit_and_evaluate, ds, tag, cfg,
                      est.member_ids, val.member_ids, a2.member_ids)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as pool:
            results = list(pool.map(job, cfg.techniques))
    else:
        results = [job(tag) for tag in cfg.techniques]
    timings["fit_evaluate"] = time.perf_counter() - t1

    for r in results:
        if np.intersect1d(r.train_ids, a2.member_ids).size:
            raise StageError("fit", RuntimeError(f"{r.tag} trained on A2 records"))

    selected = _stage("select", select_best_model,
                      {r.tag: r.metrics for r in results}, cfg.operating_a)
    rate, se = next(r for r in results if r.tag == selected).metrics.validation_curve.at(
        cfg.operating_a)
    timings["total"] = time.perf_counter() - t0
    return ExperimentReport(
        cfg, results, selected, rate, se, ds.oracle_mode, not ds.oracle_mode,
        {"A1-estimation": est.member_ids, "A1-validation": val.member_ids, "A2": a2.member_ids},
        ds.audit.snapshot(),
        {"seed": cfg.seed, "version": __version__, "numpy": np.__version__,
         "python": platform.python_version(), "timings": timings,
         "n": len(ds), "n_rejected": ds.n_rejected},
    )


def write_report(report, out_dir, models=True):
    """Write report.csv, curves.csv, selection.txt and (optionally) models/*.model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "set", "indicator", "value"])
        for r in report.results:
            for row in r.metrics.indicator_rows():
                w.writerow(format_row(row))
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "set", "acceptance_rate", "default_rate", "std_error", "n_accepted"])
        for r in report.results:
            for row in curve_rows(r.tag, "A1-validation", r.metrics.validation_curve):
                w.writerow(format_row(row))
            for row in curve_rows(r.tag, "A2", r.a2_curve):
                w.writerow(format_row(row))
    lines = [
        f"selected\t{report.selected}",
        f"operating_acceptance_rate\t{format_float(report.config.operating_a)}",
        f"validation_default_rate\t{format_float(report.selection_value)}",
        f"validation_std_error\t{format_float(report.selection_std_error)}",
        f"a2_restricted_to_accepted\t{str(report.a2_restricted).lower()}",
    ]
    (out / "selection.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if models:
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        for r in report.results:
            text = r.estimator.model_.to_text() + "\n[provenance]\n" + r.estimator.provenance_text()
            (mdir / f"{r.tag}.model").write_text(text, encoding="utf-8")
    return out

