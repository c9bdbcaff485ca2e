"""Domain types, seeded shuffling and index partitions.

Indices are 0-based throughout.  Every random choice goes through numpy's
PCG64 generator (``np.random.default_rng``) so a given seed reproduces the
same partition on every platform numpy supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, NamedTuple, Sequence, Union

import numpy as np

PValue = Union[Fraction, float]


def derive_seed(*keys: int) -> int:
    """Derive an independent 64-bit seed from a tuple of non-negative ints."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Example(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """An ordered sequence of labelled examples.

    Parameters
    ----------
    features : array of shape (l, d)
    labels : int array of shape (l,)
    alphabet : ordered label alphabet; defaults to (0, 1)
    row_ids : identity of each example (row index in the source file).
        Defaults to ``arange(l)``.  Survives shuffling and splitting so that
        externally computed scores can be matched back to examples.
    """

    features: np.ndarray
    labels: np.ndarray
    alphabet: tuple = (0, 1)
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        y = np.asarray(self.labels)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"labels must be 1-D of length {len(X)}, got shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        alphabet = tuple(int(a) for a in self.alphabet)
        if len(set(alphabet)) != len(alphabet):
            raise ValueError(f"duplicate labels in alphabet {alphabet}")
        unknown = set(np.unique(y).tolist()) - set(alphabet)
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} not in alphabet {alphabet}")
        ids = np.arange(len(y)) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise ValueError("row_ids must match the number of examples")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "row_ids", _frozen(ids))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[Example]:
        for x, y in zip(self.features, self.labels):
            yield Example(x, int(y))

    def __getitem__(self, i: int) -> Example:
        return Example(self.features[i], int(self.labels[i]))

    @property
    def dimensionality(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        """Examples at ``indices`` in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.alphabet, self.row_ids[idx])


@dataclass(frozen=True, eq=False)
class FoldPartition:
    num_indices: int
    folds: tuple
    seed: int

    def __post_init__(self):
        folds = tuple(_frozen(np.sort(np.asarray(f, dtype=np.int64))) for f in self.folds)
        object.__setattr__(self, "folds", folds)

    @property
    def K(self) -> int:
        return len(self.folds)

    @property
    def sizes(self) -> list:
        return [len(f) for f in self.folds]

    def complement(self, k: int) -> np.ndarray:
        """Indices of every fold except ``k``, in increasing order."""
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != k]))

    def __eq__(self, other):
        if not isinstance(other, FoldPartition):
            return NotImplemented
        return (self.num_indices == other.num_indices and self.K == other.K
                and all(np.array_equal(a, b) for a, b in zip(self.folds, other.folds)))


@dataclass(frozen=True, eq=False)
class SplitPartition:
    proper_training: np.ndarray
    calibration: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "proper_training", _frozen(np.sort(np.asarray(self.proper_training, dtype=np.int64))))
        object.__setattr__(self, "calibration", _frozen(np.sort(np.asarray(self.calibration, dtype=np.int64))))

    def __eq__(self, other):
        if not isinstance(other, SplitPartition):
            return NotImplemented
        return (np.array_equal(self.proper_training, other.proper_training)
                and np.array_equal(self.calibration, other.calibration))


@dataclass(frozen=True)
class PValueMap:
    """p-values of one test object, keyed by candidate label."""

    pvalues: Mapping[int, PValue]

    def __getitem__(self, label: int) -> PValue:
        return self.pvalues[label]

    def labels(self) -> tuple:
        return tuple(self.pvalues)

    def as_floats(self) -> dict:
        return {y: float(p) for y, p in self.pvalues.items()}


@dataclass(frozen=True)
class PredictionSet:
    epsilon: float
    members: frozenset


@dataclass(frozen=True)
class ConfidenceCredibility:
    confidence: float
    credibility: float


def shuffle_and_split(dataset: LabeledDataset, train_size: int, seed: int):
    """Shuffle ``dataset`` with ``seed`` and cut it into (train, test).

    The first ``train_size`` shuffled examples form the training set.
    """
    n = len(dataset)
    if not 1 <= train_size < n:
        raise ValueError(f"train_size must be in [1, {n - 1}], got {train_size}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:train_size]), dataset.subset(perm[train_size:])


def make_folds(l: int, K: int, seed: int) -> FoldPartition:
    """Shuffle ``range(l)`` and deal the result round-robin into ``K`` folds."""
    if l < 1:
        raise ValueError(f"l must be positive, got {l}")
    if not 2 <= K <= l:
        raise ValueError(f"K must satisfy 2 <= K <= l={l}, got {K}")
    perm = np.random.default_rng(seed).permutation(l)
    return FoldPartition(l, tuple(perm[k::K] for k in range(K)), seed)


def split_sizes(l: int, ratio: Sequence[int] = (2, 1)) -> tuple:
    a, b = ratio
    if a <= 0 or b <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    # round half up, then keep both parts non-empty
    n_proper = math.floor(l * a / (a + b) + 0.5)
    n_proper = min(max(n_proper, 1), l - 1)
    return n_proper, l - n_proper


def make_split(l: int, ratio: Sequence[int] = (2, 1), seed: int = 0) -> SplitPartition:
    """Random proper-training / calibration split in proportion ``ratio``."""
    if l < 2:
        raise ValueError(f"need at least 2 examples to split, got {l}")
    n_proper, _ = split_sizes(l, ratio)
    perm = np.random.default_rng(seed).permutation(l)
    return SplitPartition(perm[:n_proper], perm[n_proper:], seed)
