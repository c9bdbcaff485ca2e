"""Inductive, cross- and naive (Fisher) cross-conformal predictors.

Conformity scores are "larger = conforms better".  A p-value for candidate
label y counts calibration scores that are *at most* the test score, so ties
count in favour of the candidate:

    p^y = (#{i in C : alpha_i <= alpha^y} + 1) / (|C| + 1)          (ICP)
    p^y = (sum_k #{i in S_k : alpha_ik <= alpha^y_k} + 1) / (l + 1)  (CCP)

Counts are integers, so ICP and CCP p-values are returned as exact
``Fraction`` objects by the per-object functions and as ``(counts,
denominator)`` pairs by the batch methods.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConfidenceCredibility,
    FoldPartition,
    LabeledDataset,
    PredictionSet,
    PValueMap,
    SplitPartition,
)


# ---------------------------------------------------------------------------
# Conformity measures


class InductiveConformityMeasure(ABC):
    """A(proper training set, example) -> real conformity score.

    ``train`` fits whatever the measure needs on the proper training set once;
    ``conformity`` then scores any number of examples against that fit.
    """

    @abstractmethod
    def train(self, proper: LabeledDataset, fold: Optional[int] = None):
        ...

    @abstractmethod
    def conformity(self, fitted, features, labels, row_ids=None) -> np.ndarray:
        ...

    def candidate_scores(self, fitted, features, alphabet, row_ids=None) -> np.ndarray:
        """Scores of every (object, candidate label) pair, shape (n, |alphabet|)."""
        features = np.atleast_2d(features)
        n = len(features)
        return np.column_stack([
            self.conformity(fitted, features, np.full(n, y), row_ids) for y in alphabet
        ])


class LogitDeltaMeasure(InductiveConformityMeasure):
    """Conformity ``f(x)`` for label 1 and ``-f(x)`` for label 0.

    ``f`` is a log-odds scoring rule produced by ``learner(proper, fold)``.
    """

    def __init__(self, learner):
        self.learner = learner

    def train(self, proper, fold=None):
        return self.learner(proper, fold)

    def conformity(self, fitted, features, labels, row_ids=None):
        labels = np.asarray(labels)
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("LogitDeltaMeasure is defined for labels 0 and 1 only")
        f = fitted.score(features, row_ids)
        return np.where(labels == 1, f, -f)

    def candidate_scores(self, fitted, features, alphabet, row_ids=None):
        if tuple(alphabet) != (0, 1):
            raise ValueError(f"LogitDeltaMeasure needs the alphabet (0, 1), got {tuple(alphabet)}")
        f = fitted.score(features, row_ids)
        return np.column_stack([-f, f])

    def __repr__(self):
        return f"LogitDeltaMeasure({self.learner!r})"


# ---------------------------------------------------------------------------
# Score-level p-values


def rank_counts(calibration_scores, test_scores) -> np.ndarray:
    """``#{i : calibration_scores[i] <= t}`` for every ``t`` in ``test_scores``."""
    cal = np.sort(np.asarray(calibration_scores, dtype=float))
    return np.searchsorted(cal, np.asarray(test_scores, dtype=float), side="right")


def fold_pvalue(fold_scores, alpha_test: float) -> Fraction:
    """p-value of a test score against one fold's calibration scores."""
    scores = np.asarray(fold_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("fold has no calibration scores")
    count = int(rank_counts(scores, [alpha_test])[0])
    return Fraction(count + 1, scores.size + 1)


def icp_pvalue(calibration_scores, alpha_test: float) -> Fraction:
    return fold_pvalue(calibration_scores, alpha_test)


def ccp_pvalue(fold_scores: Sequence, alpha_tests: Sequence[float]) -> Fraction:
    """Cross-conformal p-value from per-fold calibration scores and test scores."""
    if len(fold_scores) != len(alpha_tests):
        raise ValueError("need one test score per fold")
    total = sum(int(rank_counts(s, [a])[0]) for s, a in zip(fold_scores, alpha_tests))
    l = sum(len(s) for s in fold_scores)
    return Fraction(total + 1, l + 1)


def modified_mean(fold_pvalues: Sequence, l: int, K: int):
    """``mean + (K - 1)/(l + 1) * (mean - 1)`` of ``K`` equal-fold p-values.

    Equals the cross-conformal p-value when all folds have size ``l / K``.
    Exact when the inputs are ``Fraction``.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if len(fold_pvalues) != K:
        raise ValueError(f"expected {K} fold p-values, got {len(fold_pvalues)}")
    if l % K:
        raise ValueError(f"folds are unequal: l={l} is not divisible by K={K}")
    exact = all(isinstance(p, (int, Fraction)) for p in fold_pvalues)
    if exact:
        mean = sum(fold_pvalues, Fraction(0)) / K
        return mean + Fraction(K - 1, l + 1) * (mean - 1)
    mean = math.fsum(fold_pvalues) / K
    return mean + (K - 1) / (l + 1) * (mean - 1)


def _chi2_even_survival(x: np.ndarray, K: int) -> np.ndarray:
    """P(chi^2_{2K} >= x) = exp(-x/2) * sum_{j<K} (x/2)^j / j!."""
    m = np.asarray(x, dtype=float) / 2.0
    term = np.exp(-m)
    total = term.copy()
    for j in range(1, K):
        term = term * m / j
        total = total + term
    return np.minimum(total, 1.0)


def fisher_combine(pvalues: Sequence[float]) -> float:
    """Fisher's combination: P(chi^2_{2K} >= -2 sum log p_k)."""
    p = np.asarray([float(v) for v in pvalues])
    if p.size == 0:
        raise ValueError("need at least one p-value")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    stat = -2.0 * np.log(p).sum()
    return float(_chi2_even_survival(stat, p.size))


def fisher_combine_batch(fold_pvalues: np.ndarray) -> np.ndarray:
    """Fisher combination along axis 0 of a (K, ...) array of p-values."""
    p = np.asarray(fold_pvalues, dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    return _chi2_even_survival(-2.0 * np.log(p).sum(axis=0), p.shape[0])


# ---------------------------------------------------------------------------
# Predictors


def _to_map(alphabet, counts_row, denominator) -> PValueMap:
    return PValueMap({y: Fraction(int(c), denominator) for y, c in zip(alphabet, counts_row)})


def _features_and_ids(x, row_ids):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    ids = None if row_ids is None else np.atleast_1d(np.asarray(row_ids))
    return X, ids


class InductiveConformalPredictor:
    """ICP: one rule trained on the proper training set, calibrated on the rest."""

    def __init__(self, measure: InductiveConformityMeasure):
        self.measure = measure

    def fit(self, train: LabeledDataset, split: SplitPartition):
        l = len(train)
        if l < 2:
            raise ValueError("need at least 2 training examples")
        T, C = split.proper_training, split.calibration
        if len(T) == 0 or len(C) == 0 or len(T) + len(C) != l or \
                not np.array_equal(np.union1d(T, C), np.arange(l)):
            raise ValueError("split must partition range(len(train)) into two non-empty parts")
        self.alphabet = train.alphabet
        proper, cal = train.subset(T), train.subset(C)
        self.rule_ = self.measure.train(proper, None)
        self.calibration_scores_ = np.sort(
            self.measure.conformity(self.rule_, cal.features, cal.labels, cal.row_ids))
        return self

    def pvalue_counts(self, features, row_ids=None):
        """Integer numerators (n, |Y|) and the common denominator ``|C| + 1``."""
        X, ids = _features_and_ids(features, row_ids)
        alpha = self.measure.candidate_scores(self.rule_, X, self.alphabet, ids)
        counts = np.searchsorted(self.calibration_scores_, alpha, side="right") + 1
        return counts, len(self.calibration_scores_) + 1

    def predict_p(self, features, row_ids=None) -> np.ndarray:
        counts, denom = self.pvalue_counts(features, row_ids)
        return counts / denom

    def pvalue_map(self, x, row_id=None) -> PValueMap:
        counts, denom = self.pvalue_counts(x, None if row_id is None else [row_id])
        return _to_map(self.alphabet, counts[0], denom)


class CrossConformalPredictor:
    """CCP: one rule per fold, trained on the other folds; ranks pooled over folds.

    The fitted fold scores also give the per-fold p-values, which
    :meth:`fisher_p` combines by Fisher's method (the naive variant).
    """

    def __init__(self, measure: InductiveConformityMeasure):
        self.measure = measure

    def fit(self, train: LabeledDataset, folds: FoldPartition):
        if folds.K < 2:
            raise ValueError("cross-conformal prediction needs K >= 2 folds")
        if folds.num_indices != len(train):
            raise ValueError(f"partition covers {folds.num_indices} indices, dataset has {len(train)}")
        self.alphabet = train.alphabet
        self.rules_, self.fold_scores_ = [], []
        for k, S_k in enumerate(folds.folds):
            rule = self.measure.train(train.subset(folds.complement(k)), k)
            cal = train.subset(S_k)
            self.rules_.append(rule)
            self.fold_scores_.append(np.sort(
                self.measure.conformity(rule, cal.features, cal.labels, cal.row_ids)))
        self.fold_sizes_ = np.array([len(s) for s in self.fold_scores_])
        self.l_ = int(self.fold_sizes_.sum())
        return self

    def fold_counts(self, features, row_ids=None) -> np.ndarray:
        """``#{i in S_k : alpha_ik <= alpha^y_k}`` as an array of shape (K, n, |Y|)."""
        X, ids = _features_and_ids(features, row_ids)
        return np.stack([
            np.searchsorted(scores, self.measure.candidate_scores(rule, X, self.alphabet, ids),
                            side="right")
            for rule, scores in zip(self.rules_, self.fold_scores_)
        ])

    def pvalue_counts(self, features, row_ids=None, fold_counts=None):
        fc = self.fold_counts(features, row_ids) if fold_counts is None else fold_counts
        return fc.sum(axis=0) + 1, self.l_ + 1

    def predict_p(self, features, row_ids=None, fold_counts=None) -> np.ndarray:
        counts, denom = self.pvalue_counts(features, row_ids, fold_counts)
        return counts / denom

    def fold_p(self, features, row_ids=None, fold_counts=None) -> np.ndarray:
        """Per-fold p-values, shape (K, n, |Y|)."""
        fc = self.fold_counts(features, row_ids) if fold_counts is None else fold_counts
        return (fc + 1) / (self.fold_sizes_[:, None, None] + 1)

    def fisher_p(self, features, row_ids=None, fold_counts=None) -> np.ndarray:
        return fisher_combine_batch(self.fold_p(features, row_ids, fold_counts))

    def pvalue_map(self, x, row_id=None) -> PValueMap:
        counts, denom = self.pvalue_counts(x, None if row_id is None else [row_id])
        return _to_map(self.alphabet, counts[0], denom)

    def fisher_map(self, x, row_id=None) -> PValueMap:
        fc = self.fold_counts(x, None if row_id is None else [row_id])
        fold_p = [[Fraction(int(c) + 1, int(s) + 1) for c in fc[k, 0]]
                  for k, s in enumerate(self.fold_sizes_)]
        return PValueMap({
            y: fisher_combine([fold_p[k][j] for k in range(len(fold_p))])
            for j, y in enumerate(self.alphabet)
        })


class NaiveCrossConformalPredictor(CrossConformalPredictor):
    """Cross-conformal folds combined by Fisher's method instead of pooled ranks."""

    def predict_p(self, features, row_ids=None, fold_counts=None) -> np.ndarray:
        return self.fisher_p(features, row_ids, fold_counts)

    def pvalue_map(self, x, row_id=None) -> PValueMap:
        return self.fisher_map(x, row_id)


# ---------------------------------------------------------------------------
# One-shot functional forms


def icp_pvalues(train, split, measure, x, row_id=None) -> PValueMap:
    return InductiveConformalPredictor(measure).fit(train, split).pvalue_map(x, row_id)


def ccp_pvalues(train, folds, measure, x, row_id=None) -> PValueMap:
    return CrossConformalPredictor(measure).fit(train, folds).pvalue_map(x, row_id)


def naive_ccp_pvalues(train, folds, measure, x, row_id=None) -> PValueMap:
    return CrossConformalPredictor(measure).fit(train, folds).fisher_map(x, row_id)


# ---------------------------------------------------------------------------
# Packaging p-values


def prediction_set(pvals: PValueMap, epsilon: float) -> PredictionSet:
    """Labels whose p-value strictly exceeds ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return PredictionSet(epsilon, frozenset(y for y, p in pvals.pvalues.items() if p > epsilon))


def confidence_credibility(pvals: PValueMap) -> ConfidenceCredibility:
    ps = sorted((float(p) for p in pvals.pvalues.values()), reverse=True)
    if len(ps) < 2:
        raise ValueError("confidence needs at least two candidate labels")
    return ConfidenceCredibility(confidence=1.0 - ps[1], credibility=ps[0])


def confidence_credibility_arrays(P: np.ndarray):
    """Row-wise confidence and credibility of an (n, |Y|) p-value array."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] < 2:
        raise ValueError("need an (n, |Y|) array with |Y| >= 2")
    top2 = -np.sort(-P, axis=1)[:, :2]
    return 1.0 - top2[:, 1], top2[:, 0]
