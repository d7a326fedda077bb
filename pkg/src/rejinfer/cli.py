"""Command-line front end.

Usage::

    rejinfer run --config experiment.cfg [--out DIR] [--seed N]

The config file holds ``key = value`` lines; ``#`` starts a comment.

Keys (defaults in brackets):

  data.path            CSV file of applicants (alternative to synth.*)
  data.outcome         outcome column name [outcome]
  data.decision        decision column name [none: all accepted]
  data.categorical     comma-separated columns forced categorical
  synth.n              synthetic population size [6000]
  synth.k              synthetic feature count [30]
  synth.good_rate      synthetic share of non-defaults [0.9]
  reject.rate          simulated reject share, or ``none`` [0.05 synthetic, none for CSV]
  reject.outside_fraction  random rejects added, relative to the worst segment [0.10]
  split.a1             share of the population in A1 [0.7]
  split.estimation     share of A1 used for estimation [0.6666666666666666]
  split.stratify       true/false [true]
  techniques           comma-separated tags: M1..M5, extrapolation, reclassification,
                       augmentation, parcelling, GC1, GC2, GC3 [M1,M2,M3,M4,M5]
  lambda               ridge strength [1.0]
  bands                score band count [20]
  reclassification.cutoff  score cutoff or ``prior`` [0.5]
  parcelling.kappa     reject/accepted bad-rate multiplier [2.0]
  control.fraction     share of rejects in the control group [0.30]
  operating.a          operating acceptance rate, must be on the grid [0.8]
  grid                 comma-separated acceptance rates [0.5,0.55,...,0.95]
  seed                 master seed (required unless --seed is given)
  n_jobs               techniques fitted in parallel [1]
  out.dir              output directory [out]
  plot                 write plot.svg, true/false [true]
  verbosity            0 quiet, 1 info, 2 debug [1]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DataError
from .pipeline import TECHNIQUE_ALIASES, ExperimentConfig, StageError, run_experiment, write_report
from .plot import write_svg
from .scoring import NumericalError

logger = logging.getLogger("rejinfer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


def _unit_open(v):
    x = float(v)
    if not 0 < x < 1:
        raise ValueError("must lie in (0, 1)")
    return x


def _unit_half_open(v):
    x = float(v)
    if not 0 < x <= 1:
        raise ValueError("must lie in (0, 1]")
    return x


def _positive_int(v):
    x = int(v)
    if x < 1:
        raise ValueError("must be a positive integer")
    return x


def _non_negative(v):
    x = float(v)
    if not x >= 0:
        raise ValueError("must be >= 0")
    return x


def _positive(v):
    x = float(v)
    if not x > 0:
        raise ValueError("must be > 0")
    return x


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _list(v):
    items = [s.strip() for s in v.split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(items)


def _techniques(v):
    tags = _list(v)
    for tag in tags:
        if tag not in TECHNIQUE_ALIASES:
            raise ValueError(f"unknown technique {tag!r}")
    return tags


def _grid(v):
    grid = tuple(_unit_half_open(s) for s in _list(v))
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    return grid


def _reject_rate(v):
    if v.lower() == "none":
        return None
    x = float(v)
    if not 0 < x < 0.5:
        raise ValueError("must lie in (0, 0.5)")
    return x


def _cutoff(v):
    return "prior" if v == "prior" else _unit_open(v)


def _seed(v):
    x = int(v)
    if not 0 <= x < 2 ** 64:
        raise ValueError("must be an unsigned 64-bit integer")
    return x


def _verbosity(v):
    x = int(v)
    if x not in (0, 1, 2):
        raise ValueError("must be 0, 1 or 2")
    return x


# key -> (ExperimentConfig / RunConfig field, parser)
KEYS = {
    "data.path": ("data_path", str),
    "data.outcome": ("outcome_column", str),
    "data.decision": ("decision_column", str),
    "data.categorical": ("categorical", _list),
    "synth.n": ("synth_n", _positive_int),
    "synth.k": ("synth_k", _positive_int),
    "synth.good_rate": ("synth_good_rate", _unit_open),
    "reject.rate": ("reject_rate", _reject_rate),
    "reject.outside_fraction": ("reject_outside_fraction", _non_negative),
    "split.a1": ("a1_fraction", _unit_open),
    "split.estimation": ("estimation_fraction", _unit_open),
    "split.stratify": ("stratify", _bool),
    "techniques": ("techniques", _techniques),
    "lambda": ("lam", _non_negative),
    "bands": ("n_bands", _positive_int),
    "reclassification.cutoff": ("cutoff", _cutoff),
    "parcelling.kappa": ("kappa", _positive),
    "control.fraction": ("control_fraction", _unit_half_open),
    "operating.a": ("operating_a", _unit_half_open),
    "grid": ("grid", _grid),
    "seed": ("seed", _seed),
    "n_jobs": ("n_jobs", _positive_int),
    "out.dir": ("out_dir", str),
    "plot": ("plot", _bool),
    "verbosity": ("verbosity", _verbosity),
}
RUN_KEYS = ("out_dir", "plot", "verbosity")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    out_dir: str = "out"
    plot: bool = True
    verbosity: int = 1


def parse_config(path, overrides=None):
    """Parse a ``key = value`` config file into a :class:`RunConfig`.

    ``overrides`` maps keys to already-parsed values and wins over the file.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values, lines = {}, {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", key, lineno)
        if key in values:
            raise ConfigError(f"duplicate key (first on line {lines[key]})", key, lineno)
        parser = KEYS[key][1]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"invalid value {value!r}: {exc}", key, lineno) from None
        lines[key] = lineno
    values.update(overrides or {})

    if "seed" not in values:
        raise ConfigError("missing required key", "seed")
    if "data.path" not in values and "synth.n" not in values:
        raise ConfigError("missing required key: give data.path or synth.n", "data.path")
    if "data.path" in values:
        # relative data paths are read from the config file's directory
        values["data.path"] = str(path.parent / values["data.path"])
    if "data.path" in values and any(k.startswith("synth.") for k in values):
        raise ConfigError("data.path and synth.* are mutually exclusive", "data.path",
                          lines.get("data.path"))
    if "data.path" in values and "reject.rate" not in values:
        values["reject.rate"] = None

    exp_kwargs, run_kwargs = {}, {}
    for key, value in values.items():
        field_name = KEYS[key][0]
        (run_kwargs if field_name in RUN_KEYS else exp_kwargs)[field_name] = value
    try:
        experiment = ExperimentConfig(**exp_kwargs)
    except ValueError as exc:
        key = "operating.a" if "operating" in str(exc) else None
        raise ConfigError(str(exc), key, lines.get(key)) from None
    return RunConfig(experiment, **run_kwargs)


def run(cfg):
    """Execute a parsed config; returns the process exit code."""
    try:
        report = run_experiment(cfg.experiment)
    except StageError as exc:
        print(f"rejinfer: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (NumericalError, FloatingPointError, np.linalg.LinAlgError)):
            return EXIT_NUMERIC
        return EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"rejinfer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    out = write_report(report, cfg.out_dir)
    if cfg.plot:
        write_svg(report, out / "plot.svg")
    logger.info("selected %s (default rate %.4f at a=%g); outputs in %s",
                report.selected, report.selection_value, cfg.experiment.operating_a, out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rejinfer", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a reject-inference comparison")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", help="output directory (overrides out.dir)")
    p.add_argument("--seed", help="master seed (overrides seed)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    try:
        if args.seed is not None:
            try:
                overrides["seed"] = _seed(args.seed)
            except ValueError as exc:
                raise ConfigError(f"invalid --seed: {exc}", "seed") from None
        if args.out is not None:
            overrides["out.dir"] = args.out
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"rejinfer: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}[cfg.verbosity]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

