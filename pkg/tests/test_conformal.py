import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cross_conformal.conformal import (
    CrossConformalPredictor,
    InductiveConformalPredictor,
    LogitDeltaMeasure,
    NaiveCrossConformalPredictor,
    ccp_pvalue,
    ccp_pvalues,
    confidence_credibility,
    fisher_combine,
    fold_pvalue,
    icp_pvalue,
    icp_pvalues,
    modified_mean,
    naive_ccp_pvalues,
    prediction_set,
)
from cross_conformal.core import FoldPartition, LabeledDataset, PValueMap, SplitPartition, make_folds, make_split
from cross_conformal.learners import BaselineLearner, BoostingConfig, BoostingLearner, ExternalLearner


def gaussian_data(n, seed, d=3):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, d))
    X[:, 0] += 1.5 * (y - 0.5)
    return LabeledDataset(X, y)


class TestScoreLevel:
    def test_icp_worked(self):
        assert icp_pvalue([0.2, 0.5, 0.9, 1.3], 0.7) == Fraction(3, 5)

    def test_icp_bounds(self):
        cal = [0.2, 0.5, 0.9, 1.3]
        assert icp_pvalue(cal, -5) == Fraction(1, 5)
        assert icp_pvalue(cal, 1.3) == 1
        assert icp_pvalue(cal, 9) == 1

    def test_fold_pvalue(self):
        assert fold_pvalue([1, 3, 5], 4) == Fraction(3, 4)
        assert fold_pvalue([1, 3, 5], 0) == Fraction(1, 4)
        assert fold_pvalue([1, 3, 5], 5) == 1  # the tie counts

    def test_fold_pvalue_empty(self):
        with pytest.raises(ValueError):
            fold_pvalue([], 1.0)

    def test_ccp_worked(self):
        # l=6, K=2; fold counts 2 and 1
        p = ccp_pvalue([[1, 2, 5], [0, 4, 7]], [3, 1])
        assert p == Fraction(4, 7)

    def test_ccp_bounds(self):
        folds = [[1, 2, 5], [0, 4, 7]]
        assert ccp_pvalue(folds, [-1, -1]) == Fraction(1, 7)
        assert ccp_pvalue(folds, [5, 7]) == 1


class TestModifiedMean:
    def test_worked(self):
        assert modified_mean([Fraction(3, 4), Fraction(1, 2)], 6, 2) == Fraction(4, 7)

    def test_fixed_point(self):
        assert modified_mean([Fraction(1)] * 5, 50, 5) == 1

    def test_close_to_mean(self):
        ps = [0.3, 0.5, 0.4, 0.6, 0.2]
        mean = sum(ps) / 5
        assert abs(modified_mean(ps, 1000, 5) - mean) <= 4 / 1001

    def test_unequal_folds(self):
        with pytest.raises(ValueError):
            modified_mean([Fraction(1, 2)] * 3, 10, 3)

    @given(st.integers(2, 10), st.integers(1, 30), st.data())
    @settings(max_examples=200, deadline=None)
    def test_matches_pooled_counts(self, K, m, data):
        counts = data.draw(st.lists(st.integers(0, m), min_size=K, max_size=K))
        l = K * m
        pooled = Fraction(sum(counts) + 1, l + 1)
        per_fold = [Fraction(c + 1, m + 1) for c in counts]
        assert modified_mean(per_fold, l, K) == pooled


class TestFisher:
    def test_identity_for_one(self):
        for p in (0.37, 0.01, 1.0):
            assert abs(fisher_combine([p]) - p) < 1e-12

    def test_two_halves(self):
        x = 4 * math.log(2)
        expected = math.exp(-x / 2) * (1 + x / 2)
        assert fisher_combine([0.5, 0.5]) == pytest.approx(expected, abs=1e-14)
        assert fisher_combine([0.5, 0.5]) == pytest.approx(0.5966, abs=1e-4)

    def test_three_quarters_and_half(self):
        assert fisher_combine([0.75, 0.5]) == pytest.approx(oracles.fisher_by_quadrature([0.75, 0.5]), abs=1e-9)
        assert fisher_combine([0.75, 0.5]) == pytest.approx(0.742811, abs=1e-6)

    def test_all_ones(self):
        assert fisher_combine([1.0] * 7) == 1.0

    @pytest.mark.parametrize("bad", [[0.0, 0.5], [-0.1], [1.2]])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            fisher_combine(bad)

    @pytest.mark.parametrize("K", [2, 5, 10])
    def test_against_quadrature(self, K):
        rng = np.random.default_rng(K)
        for _ in range(10):
            ps = rng.uniform(0.001, 1.0, K)
            assert fisher_combine(ps) == pytest.approx(oracles.fisher_by_quadrature(ps), abs=1e-9)

    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=10), st.data())
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, ps, data):
        k = data.draw(st.integers(0, len(ps) - 1))
        lower = list(ps)
        lower[k] = data.draw(st.floats(1e-7, ps[k]))
        assert fisher_combine(lower) <= fisher_combine(ps) + 1e-15

    def test_in_unit_interval(self):
        assert 0 < fisher_combine([1e-3] * 10) <= 1


class TestPackaging:
    pm = PValueMap({0: 0.03, 1: 0.62})

    def test_prediction_set(self):
        assert prediction_set(self.pm, 0.05).members == {1}
        assert prediction_set(self.pm, 0.01).members == {0, 1}
        assert prediction_set(self.pm, 0.62).members == frozenset()

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
    def test_bad_epsilon(self, eps):
        with pytest.raises(ValueError):
            prediction_set(self.pm, eps)

    def test_confidence_credibility(self):
        cc = confidence_credibility(self.pm)
        assert cc.confidence == pytest.approx(0.97)
        assert cc.credibility == pytest.approx(0.62)
        tie = confidence_credibility(PValueMap({0: 0.5, 1: 0.5}))
        assert (tie.confidence, tie.credibility) == (0.5, 0.5)
        three = confidence_credibility(PValueMap({0: 0.1, 1: 0.4, 2: 0.9}))
        assert three.confidence == pytest.approx(0.6) and three.credibility == pytest.approx(0.9)

    def test_one_label(self):
        with pytest.raises(ValueError):
            confidence_credibility(PValueMap({0: 0.5}))

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=5))
    @settings(max_examples=200)
    def test_set_monotone_in_epsilon(self, ps):
        pm = PValueMap(dict(enumerate(ps)))
        grid = np.linspace(0.001, 0.999, 60)
        sets = [prediction_set(pm, e).members for e in grid]
        assert all(b <= a for a, b in zip(sets, sets[1:]))


def external_instance(rng, l, K=None):
    """Dataset with integer-valued external scores (many ties) and the matching tables."""
    labels = rng.integers(0, 2, l)
    row_ids = rng.permutation(10 * l)[:l]
    ds = LabeledDataset(np.zeros((l, 1)), labels, row_ids=row_ids)
    test_row = int(10 * l + 1)
    n_tables = 1 if K is None else K
    tables = [{int(r): float(rng.integers(-3, 4)) for r in list(row_ids) + [test_row]}
              for _ in range(n_tables)]
    return ds, tables, test_row


class TestAgainstBruteForce:
    def test_icp(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            l = int(rng.integers(2, 40))
            ds, (table,), test_row = external_instance(rng, l)
            split = make_split(l, (2, 1), trial)
            measure = LogitDeltaMeasure(ExternalLearner({None: table}))
            pm = icp_pvalues(ds, split, measure, np.zeros(1), row_id=test_row)
            for y in (0, 1):
                assert pm[y] == oracles.brute_icp(ds.labels, ds.row_ids, table, split.proper_training,
                                                  split.calibration, test_row, y)

    def test_ccp(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            l = int(rng.integers(4, 40))
            K = int(rng.integers(2, min(l, 10) + 1))
            ds, tables, test_row = external_instance(rng, l, K)
            folds = make_folds(l, K, trial)
            measure = LogitDeltaMeasure(ExternalLearner(dict(enumerate(tables))))
            pm = ccp_pvalues(ds, folds, measure, np.zeros(1), row_id=test_row)
            for y in (0, 1):
                assert pm[y] == oracles.brute_ccp(ds.labels, ds.row_ids, tables, folds.folds, test_row, y)


class TestPredictors:
    def test_antisymmetry(self):
        ds = gaussian_data(60, 0)
        measure = LogitDeltaMeasure(BaselineLearner())
        rule = measure.train(ds)
        X = np.random.default_rng(3).normal(size=(20, 3))
        A = measure.candidate_scores(rule, X, (0, 1))
        np.testing.assert_array_equal(A[:, 1], -A[:, 0])
        np.testing.assert_array_equal(measure.conformity(rule, X, np.ones(20, int)),
                                      -measure.conformity(rule, X, np.zeros(20, int)))

    def test_pvalue_ranges(self):
        ds = gaussian_data(90, 1)
        X = np.random.default_rng(4).normal(size=(50, 3)) * 3
        measure = LogitDeltaMeasure(BaselineLearner())
        split = make_split(90, (2, 1), 0)
        icp = InductiveConformalPredictor(measure).fit(ds, split)
        P = icp.predict_p(X)
        n = len(split.calibration)
        assert P.min() >= 1 / (n + 1) and P.max() <= 1
        ccp = CrossConformalPredictor(measure).fit(ds, make_folds(90, 5, 0))
        P = ccp.predict_p(X)
        assert P.min() >= 1 / 91 and P.max() <= 1
        F = ccp.fisher_p(X)
        assert F.min() > 0 and F.max() <= 1

    def test_batch_matches_single(self):
        ds = gaussian_data(50, 2)
        X = np.random.default_rng(5).normal(size=(7, 3))
        measure = LogitDeltaMeasure(BaselineLearner())
        ccp = CrossConformalPredictor(measure).fit(ds, make_folds(50, 5, 1))
        P = ccp.predict_p(X)
        F = ccp.fisher_p(X)
        for j, x in enumerate(X):
            pm = ccp.pvalue_map(x)
            assert [float(pm[0]), float(pm[1])] == pytest.approx(P[j], abs=1e-15)
            fm = ccp.fisher_map(x)
            assert [fm[0], fm[1]] == pytest.approx(F[j], abs=1e-12)

    def test_naive_shares_folds(self):
        ds = gaussian_data(40, 3)
        x = np.array([0.3, -0.1, 0.2])
        measure = LogitDeltaMeasure(BaselineLearner())
        folds = make_folds(40, 4, 2)
        naive = NaiveCrossConformalPredictor(measure).fit(ds, folds)
        plain = CrossConformalPredictor(measure).fit(ds, folds)
        np.testing.assert_array_equal(naive.fold_counts([x]), plain.fold_counts([x]))
        assert naive.pvalue_map(x) == naive_ccp_pvalues(ds, folds, measure, x)

    def test_naive_all_ones(self):
        # test score at least every calibration score in every fold
        rng = np.random.default_rng(0)
        ds, tables, test_row = external_instance(rng, 12, 3)
        for t in tables:
            t[test_row] = 100.0
        measure = LogitDeltaMeasure(ExternalLearner(dict(enumerate(tables))))
        pm = naive_ccp_pvalues(ds, make_folds(12, 3, 0), measure, np.zeros(1), row_id=test_row)
        assert pm[1] == 1.0

    def test_naive_fold_values(self):
        # fold p-values 3/4 and 1/2 -> Fisher(0.75, 0.5)
        ds = LabeledDataset(np.zeros((6, 1)), [1] * 6, row_ids=range(6))
        folds = FoldPartition(6, ([0, 1, 2], [3, 4, 5]), 0)
        t0 = {0: 1.0, 1: 2.0, 2: 5.0, 99: 3.0}
        t1 = {3: 0.0, 4: 4.0, 5: 7.0, 99: 1.0}
        measure = LogitDeltaMeasure(ExternalLearner({0: t0, 1: t1}))
        ccp = CrossConformalPredictor(measure).fit(ds, folds)
        fold_p = ccp.fold_p(np.zeros((1, 1)), [99])[:, 0, 1]
        assert fold_p.tolist() == [0.75, 0.5]
        assert ccp.pvalue_map(np.zeros(1), 99)[1] == Fraction(4, 7)
        assert ccp.fisher_map(np.zeros(1), 99)[1] == pytest.approx(0.742811, abs=1e-6)

    def test_ccp_needs_two_folds(self):
        ds = gaussian_data(10, 0)
        with pytest.raises(ValueError):
            CrossConformalPredictor(LogitDeltaMeasure(BaselineLearner())).fit(
                ds, FoldPartition(10, (np.arange(10),), 0))

    def test_icp_bad_split(self):
        ds = gaussian_data(10, 0)
        with pytest.raises(ValueError):
            InductiveConformalPredictor(LogitDeltaMeasure(BaselineLearner())).fit(
                ds, SplitPartition(np.arange(6), np.arange(5, 10), 0))

    def test_external_equals_builtin(self):
        ds = gaussian_data(45, 6)
        folds = make_folds(45, 3, 0)
        test_x = np.random.default_rng(1).normal(size=(5, 3))
        test_ids = np.arange(1000, 1005)
        learner = BaselineLearner()
        tables = {}
        for k in range(3):
            rule = learner(ds.subset(folds.complement(k)), k)
            all_X = np.vstack([ds.features, test_x])
            all_ids = np.concatenate([ds.row_ids, test_ids])
            tables[k] = dict(zip(all_ids.tolist(), rule.score(all_X).tolist()))
        builtin = CrossConformalPredictor(LogitDeltaMeasure(learner)).fit(ds, folds)
        external = CrossConformalPredictor(LogitDeltaMeasure(ExternalLearner(tables))).fit(ds, folds)
        for x, r in zip(test_x, test_ids):
            assert builtin.pvalue_map(x) == external.pvalue_map(x, r)

    @pytest.mark.parametrize("make_learner", [
        lambda: BaselineLearner(),
        lambda: BoostingLearner(BoostingConfig(num_trees=15, bag_fraction=1.0)),
    ])
    def test_order_invariance(self, make_learner):
        ds = gaussian_data(36, 7)
        perm = np.random.default_rng(0).permutation(36)
        shuffled = ds.subset(perm)
        x = np.array([0.4, 0.1, -0.3])
        measure = LogitDeltaMeasure(make_learner())
        # identical proper training / calibration sets, listed in a different order
        split = make_split(36, (2, 1), 3)
        inv = np.argsort(perm)
        split_shuffled = SplitPartition(inv[split.proper_training], inv[split.calibration], 0)
        assert icp_pvalues(ds, split, measure, x) == icp_pvalues(shuffled, split_shuffled, measure, x)
        folds = make_folds(36, 4, 1)
        folds_shuffled = FoldPartition(36, tuple(inv[f] for f in folds.folds), 0)
        assert ccp_pvalues(ds, folds, measure, x) == ccp_pvalues(shuffled, folds_shuffled, measure, x)
