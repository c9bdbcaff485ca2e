import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cross_conformal.core import (
    LabeledDataset,
    make_folds,
    make_split,
    shuffle_and_split,
    split_sizes,
)


def toy(n, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.normal(size=(n, d)), rng.integers(0, 2, n))


class TestLabeledDataset:
    def test_basic(self):
        ds = LabeledDataset([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [0, 1, 1])
        assert len(ds) == 3
        assert ds.dimensionality == 2
        assert ds.alphabet == (0, 1)
        assert ds[1].label == 1
        np.testing.assert_array_equal(ds.row_ids, [0, 1, 2])

    def test_label_outside_alphabet(self):
        with pytest.raises(ValueError, match="not in alphabet"):
            LabeledDataset([[0.0], [1.0]], [0, 2])

    def test_ragged_labels(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), [0, 1])

    def test_immutable(self):
        ds = toy(5)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_subset_keeps_row_ids(self):
        ds = toy(6)
        sub = ds.subset([4, 1])
        np.testing.assert_array_equal(sub.row_ids, [4, 1])
        np.testing.assert_array_equal(sub.features, ds.features[[4, 1]])


class TestShuffleAndSplit:
    def test_4601_rows_split_3600_1001(self):
        ds = toy(4601, d=2)
        train, test = shuffle_and_split(ds, 3600, seed=0)
        assert (len(train), len(test)) == (3600, 1001)

    def test_two_examples(self):
        train, test = shuffle_and_split(toy(2), 1, seed=123)
        assert len(train) == len(test) == 1

    def test_deterministic(self):
        ds = toy(50)
        a = shuffle_and_split(ds, 30, seed=7)
        b = shuffle_and_split(ds, 30, seed=7)
        for x, y in zip(a, b):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.labels.tobytes() == y.labels.tobytes()
            assert x.row_ids.tobytes() == y.row_ids.tobytes()

    @pytest.mark.parametrize("size", [0, 10, -1])
    def test_out_of_range(self, size):
        with pytest.raises(ValueError):
            shuffle_and_split(toy(10), size, seed=0)

    @given(st.integers(2, 60), st.integers(0, 2**64 - 1), st.data())
    @settings(max_examples=50, deadline=None)
    def test_is_permutation(self, n, seed, data):
        ds = toy(n)
        size = data.draw(st.integers(1, n - 1))
        train, test = shuffle_and_split(ds, size, seed)
        ids = np.concatenate([train.row_ids, test.row_ids])
        assert sorted(ids.tolist()) == list(range(n))
        # each example travels with its own features and label
        np.testing.assert_array_equal(train.features, ds.features[train.row_ids])
        np.testing.assert_array_equal(test.labels, ds.labels[test.row_ids])


class TestMakeFolds:
    def test_uneven(self):
        sizes = make_folds(10, 3, seed=1).sizes
        assert sorted(sizes) == [3, 3, 4]

    def test_even(self):
        assert make_folds(4, 2, seed=5).sizes == [2, 2]

    def test_singletons(self):
        p = make_folds(7, 7, seed=0)
        assert p.sizes == [1] * 7

    @pytest.mark.parametrize("l,K", [(10, 1), (5, 6), (3, 0)])
    def test_bad_K(self, l, K):
        with pytest.raises(ValueError):
            make_folds(l, K, seed=0)

    def test_complement(self):
        p = make_folds(9, 3, seed=2)
        for k in range(3):
            rest = p.complement(k)
            assert set(rest) | set(p.folds[k]) == set(range(9))
            assert not set(rest) & set(p.folds[k])

    def test_regeneration_1000_triples(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            l = int(rng.integers(2, 200))
            K = int(rng.integers(2, l + 1))
            seed = int(rng.integers(0, 2**63))
            assert make_folds(l, K, seed) == make_folds(l, K, seed)

    @given(st.integers(2, 300), st.integers(0, 2**64 - 1), st.data())
    @settings(max_examples=200, deadline=None)
    def test_lawful(self, l, seed, data):
        K = data.draw(st.integers(2, l))
        p = make_folds(l, K, seed)
        all_idx = np.concatenate(p.folds)
        assert len(all_idx) == l
        assert sorted(all_idx.tolist()) == list(range(l))
        assert min(p.sizes) >= 1
        assert max(p.sizes) - min(p.sizes) <= 1


class TestMakeSplit:
    @pytest.mark.parametrize("l,expected", [(3600, (2400, 1200)), (2, (1, 1)), (10, (7, 3))])
    def test_sizes(self, l, expected):
        s = make_split(l, (2, 1), seed=0)
        assert (len(s.proper_training), len(s.calibration)) == expected

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_split(1, (2, 1), seed=0)

    def test_deterministic(self):
        assert make_split(100, (2, 1), 9) == make_split(100, (2, 1), 9)
        assert make_split(100, (2, 1), 9) != make_split(100, (2, 1), 10)

    @given(st.integers(2, 500), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32))
    @settings(max_examples=200, deadline=None)
    def test_lawful(self, l, a, b, seed):
        s = make_split(l, (a, b), seed)
        T, C = set(s.proper_training.tolist()), set(s.calibration.tolist())
        assert T and C and not T & C
        assert T | C == set(range(l))
        # nearest to a:b among sizes that keep both parts non-empty
        target = l * a / (a + b)
        assert abs(len(T) - target) <= 0.5 or len(T) in (1, l - 1)

    def test_round_half_up(self):
        assert split_sizes(3, (1, 1)) == (2, 1)
