"""Command-line experiment runner.

Example::

    cross-conformal --data data/spambase.csv --method icp,ccp,naive-ccp \\
        --folds 5,10 --seeds 0-7 --out results/
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .conformal import LogitDeltaMeasure
from .core import LabeledDataset, derive_seed, shuffle_and_split
from .evaluation import (
    _LEARNER_STREAM,
    CORNER_GRID,
    FULL_GRID,
    method_name,
    run_methods,
    seed_partitions,
    summarize,
    summarize_partial,
)
from .learners import BaselineLearner, BoostingConfig, BoostingLearner, ExternalLearner

log = logging.getLogger("cross_conformal")

METHODS = ("icp", "ccp", "naive-ccp")
LEARNERS = ("boost", "baseline", "external")


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Input


def ingest_csv(path, binary: bool = True) -> LabeledDataset:
    """Read a headerless CSV whose last column is the label.

    Row identities are the 0-based data row numbers, which external score
    files refer to.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((lineno, row))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature column and a label column")
    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows), dtype=np.int64)
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {lineno}, column {j + 1}: non-numeric value {cell.strip()!r}") from None
            if j < width - 1:
                X[i, j] = v
            elif v != int(v):
                raise DataFormatError(f"{path}: row {lineno}: label {cell.strip()!r} is not an integer")
            else:
                y[i] = int(v)
    if binary:
        bad = sorted(set(np.unique(y).tolist()) - {0, 1})
        if bad:
            raise ValueError(f"{path}: label values {bad} outside the binary alphabet {{0, 1}}")
        return LabeledDataset(X, y, (0, 1))
    return LabeledDataset(X, y, tuple(sorted(set(y.tolist()))))


def read_score_table(path) -> dict:
    """Read a ``row_index,score`` CSV into ``{row_index: score}``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row_index", "score"]:
            raise DataFormatError(f"{path}: expected header 'row_index,score'")
        table = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} columns, expected 2")
            try:
                table[int(row[0])] = float(row[1])
            except ValueError:
                raise DataFormatError(f"{path}: row {lineno}: cannot parse {row!r}") from None
    return table


# ---------------------------------------------------------------------------
# Configuration


def parse_grid(spec: str) -> np.ndarray:
    """``full``, ``corner``, ``start:stop:step`` or a comma-separated list."""
    if spec == "full":
        return FULL_GRID
    if spec == "corner":
        return CORNER_GRID
    if ":" in spec:
        start, stop, step = (float(v) for v in spec.split(":"))
        n = int(round((stop - start) / step)) + 1
        return np.round(start + step * np.arange(n), 10)
    return np.array([float(v) for v in spec.split(",")])


def parse_seeds(spec: str) -> list:
    seeds = []
    for part in spec.split(","):
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-"))
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if any(s < 0 or s >= 2**64 for s in seeds):
        raise ValueError("seeds must be 64-bit unsigned integers")
    return seeds


@dataclass
class RunConfig:
    data_path: str
    methods: tuple = ("ccp",)
    folds: tuple = (5,)
    split_ratio: tuple = (2, 1)
    learner: str = "boost"
    boosting: BoostingConfig = field(default_factory=BoostingConfig)
    seeds: tuple = tuple(range(8))
    train_size: int = 3600
    grid: np.ndarray = field(default_factory=lambda: FULL_GRID)
    output_format: str = "csv"
    out: Optional[str] = None
    scores_dir: Optional[str] = None
    jobs: int = 1

    def validate(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}")
        if any(K < 2 for K in self.folds):
            raise ValueError("every fold count must be >= 2")
        if self.learner == "external" and not self.scores_dir:
            raise ValueError("--learner external needs --scores-dir")
        if self.output_format not in ("csv", "json"):
            raise ValueError(f"unknown output format {self.output_format!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")


def _measure_factory(config: RunConfig, seed: int):
    def measure_for(method, K):
        if config.learner == "baseline":
            return LogitDeltaMeasure(BaselineLearner())
        if config.learner == "boost":
            rng_seed = derive_seed(seed, _LEARNER_STREAM, 0 if K is None else K)
            return LogitDeltaMeasure(BoostingLearner(dataclasses.replace(config.boosting, rng_seed=rng_seed)))
        base = Path(config.scores_dir) / f"seed_{seed}"
        if K is None:
            tables = {None: read_score_table(base / "icp.csv")}
        else:
            tables = {k: read_score_table(base / f"k{K}" / f"fold_{k}.csv") for k in range(K)}
        return LogitDeltaMeasure(ExternalLearner(tables))
    return measure_for


def _run_seed(args):
    config, dataset, seed = args
    train, test = shuffle_and_split(dataset, config.train_size, seed)
    log.info("seed %d: %d training / %d test examples", seed, len(train), len(test))
    try:
        return run_methods(train, test, seed, _measure_factory(config, seed), config.methods,
                           config.folds, config.split_ratio, config.grid)
    except Exception as exc:
        raise RuntimeError(f"seed {seed}: {exc}") from exc


@dataclass
class ExperimentResult:
    config: RunConfig
    reports: dict  # method -> list of SeedReport, in seed order
    summary: object


def _method_order(config: RunConfig) -> list:
    names = ["ICP"] if "icp" in config.methods else []
    for K in config.folds:
        names += [method_name(m, K) for m in ("ccp", "naive-ccp") if m in config.methods]
    return names


def run_experiment(config: RunConfig, dataset: Optional[LabeledDataset] = None) -> ExperimentResult:
    """Run every seed, summarise, and write outputs if ``config.out`` is set."""
    config.validate()
    if dataset is None:
        dataset = ingest_csv(config.data_path)
        log.info("loaded %s: %d examples, %d features", config.data_path, len(dataset),
                 dataset.dimensionality)
    jobs = [(config, dataset, s) for s in config.seeds]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            per_seed = list(pool.map(_run_seed, jobs))
    else:
        per_seed = [_run_seed(j) for j in jobs]
    reports = {m: [r[m] for r in per_seed] for m in _method_order(config)}
    summary = summarize(reports) if len(config.seeds) > 1 else summarize_partial(reports)
    result = ExperimentResult(config, reports, summary)
    if config.out:
        write_results(result, Path(config.out), config.output_format)
    return result


# ---------------------------------------------------------------------------
# Output


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def summary_rows(result: ExperimentResult):
    """Rows of ``method, statistic, seed_..., average, st_dev``."""
    seeds = list(result.config.seeds)
    header = ["method", "statistic"] + [f"seed_{s}" for s in seeds] + ["average", "st_dev"]
    rows = []
    for m in result.summary.rows.values():
        rows.append([m.method, "mean_confidence"] + [r.mean_confidence for r in m.reports]
                    + [m.average_confidence, m.std_confidence])
        rows.append([m.method, "mean_credibility"] + [r.mean_credibility for r in m.reports]
                    + [m.average_credibility, m.std_credibility])
    return header, rows


def write_results(result: ExperimentResult, out: Path, fmt: str = "csv"):
    out.mkdir(parents=True, exist_ok=True)
    header, rows = summary_rows(result)
    if fmt == "csv":
        with (out / "summary.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow(row[:2] + [_fmt(v) for v in row[2:]])
        for method, reports in result.reports.items():
            d = out / "curves" / method
            d.mkdir(parents=True, exist_ok=True)
            for r in reports:
                with (d / f"seed_{r.seed}.csv").open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["epsilon", "error_rate"])
                    for e, v in zip(r.curve.grid, r.curve.error_rate):
                        w.writerow([repr(float(e)), repr(float(v))])
    else:
        doc = {
            "summary": [dict(zip(header, row[:2] + [None if v is None else float(v) for v in row[2:]]))
                        for row in rows],
            "curves": [
                {"method": method, "seed": r.seed,
                 "epsilon": [float(e) for e in r.curve.grid],
                 "error_rate": [float(v) for v in r.curve.error_rate]}
                for method, reports in result.reports.items() for r in reports
            ],
        }
        with (out / "results.json").open("w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


def dump_partitions(config: RunConfig, dataset: LabeledDataset, path: Path):
    """Write, per seed, which original rows land in each role.

    External learners use this to know what to train on before producing
    score files for ``--scores-dir``.
    """
    doc = {}
    for seed in config.seeds:
        train, test = shuffle_and_split(dataset, config.train_size, seed)
        split, folds = seed_partitions(len(train), seed, config.folds, config.split_ratio)
        ids = train.row_ids
        doc[str(seed)] = {
            "train": ids.tolist(),
            "test": test.row_ids.tolist(),
            "icp": {"proper_training": ids[split.proper_training].tolist(),
                    "calibration": ids[split.calibration].tolist()},
            "folds": {str(K): [ids[f].tolist() for f in p.folds] for K, p in folds.items()},
        }
    path.write_text(json.dumps(doc) + "\n")


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cross-conformal",
        description="Inductive, cross- and naive cross-conformal prediction experiments "
                    "on a binary CSV dataset (features..., label).")
    p.add_argument("--data", required=True, help="headerless CSV, last column the 0/1 label")
    p.add_argument("--method", default="ccp",
                   help="comma-separated subset of icp, ccp, naive-ccp (default: ccp)")
    p.add_argument("--folds", default=None, help="comma-separated fold counts for CCP methods (default: 5)")
    p.add_argument("--split-ratio", default=None,
                   help="proper-training:calibration ratio for ICP (default: 2:1)")
    p.add_argument("--learner", default="boost", choices=LEARNERS)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--depth", type=int, default=1, help="tree interaction depth (1 = stumps)")
    p.add_argument("--bag-fraction", type=float, default=1.0)
    p.add_argument("--seeds", default="0-7", help="e.g. 0-7 or 0,3,5 (default: 0-7)")
    p.add_argument("--train-size", type=int, default=3600)
    p.add_argument("--eps-grid", default="full",
                   help="full (0:1:0.01), corner (0:0.1:0.002), start:stop:step, or a comma list")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--scores-dir", default=None, help="external score files (with --learner external)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")
    p.add_argument("--dump-partitions", default=None, metavar="PATH",
                   help="write the per-seed row partitions as JSON and exit")
    return p


def config_from_args(args) -> RunConfig:
    methods = tuple(m.strip() for m in args.method.split(",") if m.strip())
    has_ccp = any(m in ("ccp", "naive-ccp") for m in methods)
    if args.folds is not None and not has_ccp:
        raise ValueError("--folds applies only to the ccp and naive-ccp methods")
    if args.split_ratio is not None and "icp" not in methods:
        raise ValueError("--split-ratio applies only to the icp method")
    folds = tuple(int(k) for k in (args.folds or "5").split(","))
    a, b = (int(v) for v in (args.split_ratio or "2:1").split(":"))
    config = RunConfig(
        data_path=args.data,
        methods=methods,
        folds=folds if has_ccp else (),
        split_ratio=(a, b),
        learner=args.learner,
        boosting=BoostingConfig(num_trees=args.trees, shrinkage=args.shrinkage,
                                interaction_depth=args.depth, bag_fraction=args.bag_fraction),
        seeds=tuple(parse_seeds(args.seeds)),
        train_size=args.train_size,
        grid=parse_grid(args.eps_grid),
        output_format=args.format,
        out=args.out,
        scores_dir=args.scores_dir,
        jobs=args.jobs,
    )
    config.validate()
    return config


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.dump_partitions:
            dump_partitions(config, ingest_csv(config.data_path), Path(args.dump_partitions))
            return 0
        result = run_experiment(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(result.summary.format())
    return 0


if __name__ == "__main__":
    sys.exit(main())
