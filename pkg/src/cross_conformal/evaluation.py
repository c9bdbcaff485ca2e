"""Calibration curves, per-seed efficiency statistics and Monte Carlo validity checks."""

from __future__ import annotations

import statistics
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .conformal import (
    CrossConformalPredictor,
    InductiveConformalPredictor,
    confidence_credibility_arrays,
)
from .core import LabeledDataset, PValueMap, derive_seed, make_folds, make_split

FULL_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)
CORNER_GRID = np.round(np.linspace(0.0, 0.1, 51), 3)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("epsilon grid must be a non-empty 1-D sequence")
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("epsilon grid must lie in [0, 1]")
    if np.any(np.diff(g) <= 0):
        raise ValueError("epsilon grid must be strictly increasing")
    return g


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    grid: np.ndarray
    error_rate: np.ndarray

    def max_deviation(self, upto: float = 1.0) -> float:
        """Largest ``|error_rate(eps) - eps|`` over grid points ``eps <= upto``."""
        keep = self.grid <= upto + 1e-12
        return float(np.max(np.abs(self.error_rate[keep] - self.grid[keep])))

    def at(self, epsilon: float) -> float:
        i = int(np.argmin(np.abs(self.grid - epsilon)))
        if abs(self.grid[i] - epsilon) > 1e-9:
            raise KeyError(f"epsilon {epsilon} is not on the grid")
        return float(self.error_rate[i])


def error_curve(true_label_pvalues, grid=FULL_GRID) -> CalibrationCurve:
    """Error rate of the set predictor at each ``eps``.

    The true label is left out of the prediction set exactly when its
    p-value is ``<= eps``.
    """
    g = _check_grid(grid)
    p = np.asarray(true_label_pvalues, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one test object")
    errors = np.sort(p)
    return CalibrationCurve(g, np.searchsorted(errors, g, side="right") / p.size)


def calibration_curve(pvalue_maps: Sequence, grid=FULL_GRID) -> CalibrationCurve:
    """Calibration curve from ``(PValueMap, true label)`` pairs."""
    if len(pvalue_maps) == 0:
        raise ValueError("need at least one test object")
    return error_curve([float(pm[y]) for pm, y in pvalue_maps], grid)


@dataclass(frozen=True, eq=False)
class SeedReport:
    seed: int
    mean_confidence: float
    mean_credibility: float
    curve: CalibrationCurve


@dataclass(frozen=True)
class MethodSummary:
    method: str
    reports: tuple
    average_confidence: float
    std_confidence: Optional[float]
    average_credibility: float
    std_credibility: Optional[float]


@dataclass(frozen=True)
class SummaryTable:
    rows: Mapping[str, MethodSummary]

    def __getitem__(self, method: str) -> MethodSummary:
        return self.rows[method]

    def format(self) -> str:
        """Plain-text table in the layout of a per-seed results table, in percent."""
        lines = []
        for m in self.rows.values():
            seeds = [r.seed for r in m.reports]
            if not lines:
                lines.append("\t".join(["statistic"] + [str(s) for s in seeds] + ["average", "st.dev"]))
            for name, values, avg, sd in (
                ("mean conf., " + m.method, [r.mean_confidence for r in m.reports],
                 m.average_confidence, m.std_confidence),
                ("mean cred., " + m.method, [r.mean_credibility for r in m.reports],
                 m.average_credibility, m.std_credibility),
            ):
                cells = [f"{100 * v:.2f}%" for v in values] + [f"{100 * avg:.2f}%"]
                cells.append("-" if sd is None else f"{100 * sd:.3f}%")
                lines.append("\t".join([name] + cells))
        return "\n".join(lines)


def _method_summary(method, reports, require_std=True) -> MethodSummary:
    reports = tuple(reports)
    if require_std and len(reports) < 2:
        raise ValueError(f"{method}: need at least 2 seeds for a standard deviation")
    conf = [r.mean_confidence for r in reports]
    cred = [r.mean_credibility for r in reports]
    # statistics.* work in exact arithmetic, so seed order cannot change the result
    return MethodSummary(
        method, reports,
        statistics.fmean(conf), statistics.stdev(conf) if len(conf) > 1 else None,
        statistics.fmean(cred), statistics.stdev(cred) if len(cred) > 1 else None,
    )


def summarize(reports: Mapping[str, Sequence[SeedReport]]) -> SummaryTable:
    """Across-seed average and sample standard deviation per method."""
    return SummaryTable({m: _method_summary(m, rs) for m, rs in reports.items()})


def summarize_partial(reports: Mapping[str, Sequence[SeedReport]]) -> SummaryTable:
    """Like :func:`summarize` but a single seed yields ``None`` standard deviations."""
    return SummaryTable({m: _method_summary(m, rs, require_std=False) for m, rs in reports.items()})


def seed_report(seed: int, pvalues: np.ndarray, true_labels, alphabet, grid=FULL_GRID) -> SeedReport:
    """Mean confidence/credibility and calibration curve of an (n, |Y|) p-value array."""
    pvalues = np.asarray(pvalues, dtype=float)
    conf, cred = confidence_credibility_arrays(pvalues)
    col = np.searchsorted(np.asarray(alphabet), np.asarray(true_labels))
    p_true = pvalues[np.arange(len(pvalues)), col]
    return SeedReport(seed, float(conf.mean()), float(cred.mean()), error_curve(p_true, grid))


# ---------------------------------------------------------------------------
# Experiment protocol on a fixed train/test split

# stream tags for derive_seed
_SPLIT_STREAM, _FOLD_STREAM, _LEARNER_STREAM, _TRIAL_STREAM = 1, 2, 3, 4


def method_name(method: str, K: Optional[int] = None) -> str:
    return {"icp": "ICP", "ccp": f"CCP-K{K}", "naive-ccp": f"naive-CCP-K{K}"}[method]


def seed_partitions(l: int, seed: int, folds: Sequence[int] = (), split_ratio=(2, 1)):
    """The ICP split and the K-fold partitions a seed induces on a training set of size ``l``."""
    split = make_split(l, split_ratio, derive_seed(seed, _SPLIT_STREAM))
    return split, {K: make_folds(l, K, derive_seed(seed, _FOLD_STREAM, K)) for K in folds}


def run_methods(train: LabeledDataset, test: LabeledDataset, seed: int, measure_for,
                methods: Sequence[str], folds: Sequence[int] = (5, 10),
                split_ratio=(2, 1), grid=FULL_GRID) -> dict:
    """Fit every requested predictor on ``train`` and report on ``test``.

    ``measure_for(method, K)`` returns the conformity measure to use.  CCP and
    naive CCP with the same ``K`` share one set of fitted folds.
    """
    ccp_methods = [m for m in ("ccp", "naive-ccp") if m in methods]
    split, partitions = seed_partitions(len(train), seed, folds if ccp_methods else (), split_ratio)
    out = {}
    if "icp" in methods:
        icp = InductiveConformalPredictor(measure_for("icp", None)).fit(train, split)
        P = icp.predict_p(test.features, test.row_ids)
        out["ICP"] = seed_report(seed, P, test.labels, train.alphabet, grid)
    for K, partition in partitions.items():
        ccp = CrossConformalPredictor(measure_for("ccp", K)).fit(train, partition)
        fc = ccp.fold_counts(test.features, test.row_ids)
        if "ccp" in ccp_methods:
            out[method_name("ccp", K)] = seed_report(
                seed, ccp.predict_p(None, fold_counts=fc), test.labels, train.alphabet, grid)
        if "naive-ccp" in ccp_methods:
            out[method_name("naive-ccp", K)] = seed_report(
                seed, ccp.fisher_p(None, fold_counts=fc), test.labels, train.alphabet, grid)
    return out


# ---------------------------------------------------------------------------
# Synthetic data and Monte Carlo validity


@dataclass(frozen=True)
class GaussianClasses:
    """Two Gaussian classes in ``dim`` dimensions.

    Class means are ``-separation/2`` and ``+separation/2`` along the first
    axis; every coordinate has standard deviation ``scale``.  With
    probability ``label_noise`` the reported label is replaced by a fair
    coin flip, so ``label_noise=1`` makes labels independent of features.
    """

    dim: int = 5
    separation: float = 2.0
    label_noise: float = 0.0
    positive_rate: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate must lie in (0, 1)")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    @property
    def degenerate(self) -> bool:
        return self.scale == 0 and self.separation == 0

    def sample(self, n: int, rng: np.random.Generator):
        cls = (rng.random(n) < self.positive_rate).astype(np.int64)
        X = rng.normal(0.0, self.scale, size=(n, self.dim)) if self.scale > 0 else np.zeros((n, self.dim))
        X[:, 0] += (cls - 0.5) * self.separation
        flip = rng.random(n) < self.label_noise
        y = np.where(flip, (rng.random(n) < 0.5).astype(np.int64), cls)
        return X, y


def pure_noise(dim: int = 5) -> GaussianClasses:
    return GaussianClasses(dim=dim, separation=2.0, label_noise=1.0)


# predictor(train, x, seed) -> PValueMap
Predictor = Callable[[LabeledDataset, np.ndarray, int], PValueMap]


def icp_predictor(measure, split_ratio=(2, 1)) -> Predictor:
    def predict(train, x, seed):
        split = make_split(len(train), split_ratio, derive_seed(seed, _SPLIT_STREAM))
        return InductiveConformalPredictor(measure).fit(train, split).pvalue_map(x)
    return predict


def ccp_predictor(measure, K: int = 5, naive: bool = False) -> Predictor:
    def predict(train, x, seed):
        folds = make_folds(len(train), K, derive_seed(seed, _FOLD_STREAM, K))
        ccp = CrossConformalPredictor(measure).fit(train, folds)
        return ccp.fisher_map(x) if naive else ccp.pvalue_map(x)
    return predict


def full_set_predictor(train, x, seed) -> PValueMap:
    return PValueMap({y: 1.0 for y in train.alphabet})


@dataclass(frozen=True, eq=False)
class ValidityResult:
    grid: np.ndarray
    error_rate: np.ndarray
    std_error: np.ndarray
    trials: int

    def bound(self, epsilon: float, z: float = 3.0) -> float:
        return epsilon + z * np.sqrt(epsilon * (1 - epsilon) / self.trials)


def validity_mc(predictor: Predictor, generator: GaussianClasses, trials: int,
                grid: Sequence[float], train_size: int = 100, seed: int = 0) -> ValidityResult:
    """Empirical error frequency of ``predictor`` over independent trials.

    Each trial draws a fresh i.i.d. training set of ``train_size`` examples
    and one test example from ``generator`` using a PCG64 stream seeded by
    ``derive_seed(seed, 4, trial)``, so any subset of trials can be rerun in
    isolation and in any order.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    g = _check_grid(grid)
    if generator.degenerate:
        warnings.warn("generator is a point mass; every example is identical", RuntimeWarning)
    hits = np.zeros(g.size)
    for t in range(trials):
        trial_seed = derive_seed(seed, _TRIAL_STREAM, t)
        rng = np.random.default_rng(trial_seed)
        X, y = generator.sample(train_size + 1, rng)
        train = LabeledDataset(X[:-1], y[:-1])
        p = float(predictor(train, X[-1], trial_seed)[int(y[-1])])
        hits += p <= g
    rate = hits / trials
    return ValidityResult(g, rate, np.sqrt(rate * (1 - rate) / trials), trials)
