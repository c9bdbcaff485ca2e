"""Scoring rules: trained maps from feature vectors to log-odds of label 1.

Three learners are provided:

* :func:`train_boosted_stumps` -- gradient boosting of depth-limited
  regression trees on the binomial deviance (MART / TreeBoost).
* :func:`train_baseline` -- ridge-penalised linear logistic regression,
  deterministic and fast; used heavily in tests and Monte Carlo runs.
* :func:`external_scores` -- a lookup table of precomputed scores keyed by
  row identity, so any outside model can drive the conformal predictors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol

import numpy as np
from scipy.special import expit

from .core import LabeledDataset, derive_seed

CLAMP = 15.0


class ScoringRule(Protocol):
    def score(self, features: np.ndarray, row_ids: Optional[np.ndarray] = None) -> np.ndarray:
        ...


class MissingScoreError(LookupError):
    """An external score table has no entry for a queried row."""

    def __init__(self, row):
        super().__init__(f"no external score for row {row}")
        self.row = row


def binomial_deviance(y, f):
    """Per-example negative log-likelihood ``log(1 + e^f) - y f``."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    return np.logaddexp(0.0, f) - y * f


def deviance_negative_gradient(y, f):
    """``-d/df binomial_deviance(y, f) = y - 1 / (1 + exp(-f))``."""
    return np.asarray(y, dtype=float) - expit(f)


def _as_matrix(features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    return X.reshape(1, -1) if X.ndim == 1 else X


def _check_binary(train: LabeledDataset):
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not set(np.unique(train.labels).tolist()) <= {0, 1}:
        raise ValueError("binary learners need labels in {0, 1}")


# ---------------------------------------------------------------------------
# Gradient boosting


@dataclass(frozen=True)
class BoostingConfig:
    """Knobs for :func:`train_boosted_stumps`.

    ``min_leaf`` is the smallest number of in-bag examples a leaf may hold.
    """

    num_trees: int = 500
    shrinkage: float = 0.1
    interaction_depth: int = 1
    bag_fraction: float = 1.0
    rng_seed: int = 0
    min_leaf: int = 10

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError(f"num_trees must be non-negative, got {self.num_trees}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")
        if self.interaction_depth < 1:
            raise ValueError(f"interaction_depth must be >= 1, got {self.interaction_depth}")
        if not 0.0 < self.bag_fraction <= 1.0:
            raise ValueError(f"bag_fraction must lie in (0, 1], got {self.bag_fraction}")
        if self.min_leaf < 1:
            raise ValueError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.depth):
            feat = self.feature[node]
            idx = np.flatnonzero(feat >= 0)
            if idx.size == 0:
                break
            n = node[idx]
            go_left = X[idx, feat[idx]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
        return self.value[node]


@dataclass(frozen=True, eq=False)
class BoostedTrees:
    """Additive tree model; ``score`` returns clamped log-odds."""

    initial: float
    trees: tuple
    num_features: int

    def score(self, features, row_ids=None) -> np.ndarray:
        X = _as_matrix(features)
        if X.shape[1] != self.num_features:
            raise ValueError(f"expected {self.num_features} features, got {X.shape[1]}")
        F = np.full(len(X), self.initial)
        # clamp after every tree, exactly as during training
        for tree in self.trees:
            F = np.clip(F + tree.predict(X), -CLAMP, CLAMP)
        return F


class _SplitFinder:
    """Exact greedy split search.

    Each feature column is reduced to its distinct values once; per node the
    residual sums and counts of every (feature, distinct value) bin come from
    a single ``bincount``.  Candidate thresholds sit between consecutive
    distinct values.
    """

    def __init__(self, X: np.ndarray, min_leaf: int):
        self.X = X
        self.min_leaf = min_leaf
        n, d = X.shape
        uniques, inverse = [], np.empty((n, d), dtype=np.int64)
        offset = 0
        self.starts = []
        for j in range(d):
            u, inv = np.unique(X[:, j], return_inverse=True)
            uniques.append(u)
            inverse[:, j] = inv + offset
            self.starts.append(offset)
            offset += len(u)
        self.uniques = uniques
        self.bins = inverse.ravel()
        self.num_bins = offset
        self.feature_of_bin = np.repeat(np.arange(d), [len(u) for u in uniques])
        self.value_of_bin = np.concatenate(uniques) if uniques else np.empty(0)
        ends = np.array(self.starts[1:] + [offset])
        # a split after bin b is possible unless b is the last bin of its feature
        self.splittable = np.ones(offset, dtype=bool)
        self.splittable[ends - 1] = False
        self.first_of_feature = np.array(self.starts)

    def _per_feature_cumsum(self, per_bin: np.ndarray) -> np.ndarray:
        c = np.cumsum(per_bin)
        base = np.concatenate([[0.0], c])[self.first_of_feature]
        return c - base[self.feature_of_bin]

    def best(self, residual: np.ndarray, member: np.ndarray):
        """Return ``(feature, threshold)`` of the best split, or None."""
        if self.num_bins == 0 or not self.splittable.any():
            return None
        d = self.X.shape[1]
        m = member.astype(float)
        rm = residual * m
        SL = self._per_feature_cumsum(np.bincount(self.bins, np.repeat(rm, d), self.num_bins))
        NL = self._per_feature_cumsum(np.bincount(self.bins, np.repeat(m, d), self.num_bins))
        S, N = rm.sum(), m.sum()
        SR, NR = S - SL, N - NL
        valid = self.splittable & (NL >= self.min_leaf) & (NR >= self.min_leaf)
        if not valid.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = SL * SL / NL + SR * SR / NR - S * S / N
        gain = np.where(valid, gain, -np.inf)
        # bins are feature-major with increasing values: argmax takes the
        # lowest feature, then the lowest threshold
        b = int(np.argmax(gain))
        if not gain[b] > 1e-10 * float(np.dot(rm, rm)):
            return None
        j = int(self.feature_of_bin[b])
        cut = self.value_of_bin[b]
        col = self.X[:, j]
        lmax = col[member & (col <= cut)].max()
        rmin = col[member & (col > cut)].min()
        thr = 0.5 * (lmax + rmin)
        if not lmax <= thr < rmin:
            thr = lmax
        return j, thr


def _leaf_step(y, F, g, h, shrinkage):
    """Shrunken Newton step for one leaf, halved until it does not raise the deviance."""
    if h <= 0.0 or g == 0.0:
        return 0.0
    step = shrinkage * g / h
    before = binomial_deviance(y, F).sum()
    for _ in range(40):
        after = binomial_deviance(y, np.clip(F + step, -CLAMP, CLAMP)).sum()
        if after <= before:
            return step
        step *= 0.5
    return 0.0


def _grow_tree(finder, X, y, F, residual, inbag, config) -> _Tree:
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    members = [inbag]
    frontier = [(0, 0)]
    while frontier:
        node, d = frontier.pop(0)
        if d >= config.interaction_depth:
            continue
        split = finder.best(residual, members[node])
        if split is None:
            continue
        j, thr = split
        goes_left = X[:, j] <= thr
        for child_mask in (members[node] & goes_left, members[node] & ~goes_left):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            members.append(child_mask)
        feature[node], threshold[node] = j, thr
        left[node], right[node] = len(members) - 2, len(members) - 1
        frontier += [(left[node], d + 1), (right[node], d + 1)]

    p = expit(F)
    hess = p * (1.0 - p)
    value = np.zeros(len(members))
    for node, mask in enumerate(members):
        if feature[node] == -1:
            value[node] = _leaf_step(y[mask], F[mask], residual[mask].sum(), hess[mask].sum(),
                                     config.shrinkage)
    return _Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                 value, config.interaction_depth)


def train_boosted_stumps(train: LabeledDataset, config: BoostingConfig = BoostingConfig()) -> BoostedTrees:
    """Fit a gradient-boosted tree model of the log-odds of label 1.

    The fit starts from the empirical base-rate log-odds and adds one
    regression tree per round, grown on the negative deviance gradient
    ``y - p``.  Leaf values are shrunken one-step Newton updates
    ``shrinkage * sum(y - p) / sum(p (1 - p))``; a step that would increase
    the leaf's deviance is halved until it does not, so with
    ``bag_fraction=1`` the training deviance never increases.  Scores are
    clamped to ``[-CLAMP, CLAMP]`` after initialisation and after every tree.

    With ``bag_fraction < 1`` each tree sees a subsample drawn without
    replacement from a PCG64 stream seeded by ``config.rng_seed``.
    """
    _check_binary(train)
    X, y = train.features, train.labels.astype(float)
    n = len(y)
    n1 = y.sum()
    n0 = n - n1
    if n0 == 0:
        f0 = CLAMP
    elif n1 == 0:
        f0 = -CLAMP
    else:
        f0 = float(np.clip(np.log(n1 / n0), -CLAMP, CLAMP))

    finder = _SplitFinder(X, config.min_leaf)
    rng = np.random.default_rng(config.rng_seed)
    n_bag = max(1, int(round(config.bag_fraction * n)))
    F = np.full(n, f0)
    trees = []
    for _ in range(config.num_trees):
        if n_bag < n:
            inbag = np.zeros(n, dtype=bool)
            inbag[rng.choice(n, size=n_bag, replace=False)] = True
        else:
            inbag = np.ones(n, dtype=bool)
        residual = deviance_negative_gradient(y, F)
        tree = _grow_tree(finder, X, y, F, residual, inbag, config)
        trees.append(tree)
        F = np.clip(F + tree.predict(X), -CLAMP, CLAMP)
    return BoostedTrees(f0, tuple(trees), X.shape[1])


# ---------------------------------------------------------------------------
# Ridge logistic baseline


@dataclass(frozen=True, eq=False)
class LinearLogOdds:
    center: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    intercept: float

    def score(self, features, row_ids=None) -> np.ndarray:
        Z = (_as_matrix(features) - self.center) / self.scale
        return self.intercept + Z @ self.coef


def train_baseline(train: LabeledDataset, ridge: float = 1e-3) -> LinearLogOdds:
    """Ridge-penalised logistic regression on standardised features.

    Minimises ``mean(deviance) + ridge/2 * (|w|^2 + b^2)`` by damped Newton
    iterations.  The penalty is per example, so duplicating the training set
    leaves the fit unchanged; penalising the intercept keeps single-label
    training sets bounded.
    """
    _check_binary(train)
    X, y = train.features, train.labels.astype(float)
    n, d = X.shape
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    A = np.hstack([np.ones((n, 1)), (X - center) / scale])

    def objective(w):
        return binomial_deviance(y, A @ w).mean() + 0.5 * ridge * w @ w

    w = np.zeros(d + 1)
    J = objective(w)
    for _ in range(100):
        p = expit(A @ w)
        grad = A.T @ (p - y) / n + ridge * w
        H = (A.T * (p * (1 - p))) @ A / n + ridge * np.eye(d + 1)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while t > 1e-10:
            J_new = objective(w - t * step)
            if J_new <= J:
                break
            t *= 0.5
        w = w - t * step
        J = J_new
        if np.max(np.abs(t * step)) < 1e-12:
            break
    return LinearLogOdds(center, scale, w[1:], float(w[0]))


# ---------------------------------------------------------------------------
# External scores


@dataclass(frozen=True, eq=False)
class ExternalScores:
    table: Mapping[int, float]

    def score(self, features=None, row_ids=None) -> np.ndarray:
        if row_ids is None:
            raise MissingScoreError("<unidentified>")
        out = np.empty(len(row_ids))
        for i, row in enumerate(np.asarray(row_ids).ravel()):
            try:
                out[i] = self.table[int(row)]
            except KeyError:
                raise MissingScoreError(int(row)) from None
        return out


def external_scores(score_table: Mapping[int, float]) -> ExternalScores:
    return ExternalScores({int(k): float(v) for k, v in score_table.items()})


# ---------------------------------------------------------------------------
# Learner policies: (proper training set, fold key) -> ScoringRule


@dataclass(frozen=True)
class BoostingLearner:
    """Boosting policy; each fold gets its own RNG stream derived from the seed."""

    config: BoostingConfig = BoostingConfig()

    def __call__(self, proper: LabeledDataset, fold: Optional[int] = None) -> BoostedTrees:
        seed = self.config.rng_seed if fold is None else derive_seed(self.config.rng_seed, fold)
        return train_boosted_stumps(proper, dataclasses.replace(self.config, rng_seed=seed))


@dataclass(frozen=True)
class BaselineLearner:
    ridge: float = 1e-3

    def __call__(self, proper: LabeledDataset, fold: Optional[int] = None) -> LinearLogOdds:
        return train_baseline(proper, self.ridge)


@dataclass(frozen=True)
class ExternalLearner:
    """Ignores the training data and serves a precomputed table.

    ``tables`` maps a fold index (``None`` for the inductive split) to a
    ``row_id -> score`` table.
    """

    tables: Mapping

    def __call__(self, proper: LabeledDataset, fold: Optional[int] = None) -> ExternalScores:
        if fold not in self.tables:
            raise ValueError(f"no external score table for fold {fold}")
        return external_scores(self.tables[fold])
