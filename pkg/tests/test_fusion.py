import math

import numpy as np
import pytest

from voicetriage.errors import DataError
from voicetriage.fusion import estimate, majority_vote_fuse, subject_accuracy_estimate


class TestEstimate:
    def test_reported_k5(self):
        v = subject_accuracy_estimate(0.805, 5)
        assert v == pytest.approx(0.945848, abs=1e-6)
        assert abs(v - 0.9459) <= 0.0005

    def test_reported_k11(self):
        v = subject_accuracy_estimate(0.805, 11)
        assert abs(v - 0.990) <= 0.001

    def test_half_probability_odd_k(self):
        for k in (1, 3, 5, 7, 9, 11):
            assert subject_accuracy_estimate(0.5, k) == 0.5

    def test_degenerate_ends(self):
        for k in (1, 2, 5, 10, 64):
            assert subject_accuracy_estimate(0.0, k) == 0.0
            assert subject_accuracy_estimate(1.0, k) == 1.0

    def test_k1_is_identity(self):
        for p in (0.0, 0.3, 0.77, 1.0):
            assert subject_accuracy_estimate(p, 1) == pytest.approx(p)

    def test_monotone_in_odd_k(self):
        p = 0.7
        vals = [subject_accuracy_estimate(p, k) for k in range(1, 16, 2)]
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_even_k_counts_tie_as_success(self):
        # k=2, lower limit is ceil(1) = 1: one success (a tie) already counts
        p = 0.6
        expected = math.comb(2, 1) * p * (1 - p) + p * p
        assert subject_accuracy_estimate(p, 2) == pytest.approx(expected)
        assert subject_accuracy_estimate(p, 2) > subject_accuracy_estimate(p, 1) - 1e-12

    def test_validation(self):
        with pytest.raises(DataError):
            subject_accuracy_estimate(1.2, 3)
        with pytest.raises(DataError):
            subject_accuracy_estimate(0.5, 0)
        with pytest.raises(DataError):
            subject_accuracy_estimate(0.5, 65)
        with pytest.raises(DataError):
            subject_accuracy_estimate(0.5, 2.5)

    def test_estimate_wrapper(self):
        e = estimate(0.9, 3)
        assert e.p == 0.9 and e.k == 3
        assert e.acc_subject == subject_accuracy_estimate(0.9, 3)


class TestMajorityVote:
    def test_plurality(self):
        assert majority_vote_fuse([0, 0, 1]) == 0

    def test_tie_breaks_by_summed_score(self):
        scores = np.array([[1.4, 0.2], [0.0, 0.9]])
        assert majority_vote_fuse([0, 1], scores) == 0
        scores = np.array([[0.1, 0.2], [0.0, 0.9]])
        assert majority_vote_fuse([0, 1], scores) == 1

    def test_tie_without_scores_lowest_index(self):
        assert majority_vote_fuse([2, 1]) == 1

    def test_empty_error(self):
        with pytest.raises(DataError):
            majority_vote_fuse([])

    def test_monte_carlo_matches_estimate_k5(self):
        rng = np.random.default_rng(0)
        p, k, trials = 0.805, 5, 100_000
        correct = 0
        draws = rng.random((trials, k)) < p
        scores = np.zeros((k, 2))
        for t in range(trials):
            labels = np.where(draws[t], 0, 1)  # 0 = correct label
            correct += majority_vote_fuse(labels, scores) == 0
        assert correct / trials == pytest.approx(0.946, abs=0.003)

    def test_monte_carlo_matches_estimate_random_pairs(self):
        rng = np.random.default_rng(1)
        trials = 4000
        for _ in range(20):
            p = float(rng.uniform(0.3, 0.95))
            k = int(rng.choice([1, 3, 5, 7, 9]))
            draws = rng.random((trials, k)) < p
            n_correct = (draws.sum(axis=1) > k // 2).sum()
            emp = n_correct / trials
            theory = subject_accuracy_estimate(p, k)
            se = np.sqrt(theory * (1 - theory) / trials)
            assert abs(emp - theory) <= 3 * se + 1e-9

    def test_even_k_formula_vs_empirical_fuser_gap(self):
        # the formula credits exact ties; a score tie-break wins only half of them
        rng = np.random.default_rng(2)
        p, k, trials = 0.7, 4, 20_000
        draws = rng.random((trials, k)) < p
        fused_correct = 0
        for t in range(trials):
            labels = np.where(draws[t], 0, 1)
            scores = rng.normal(size=(k, 2))
            fused_correct += majority_vote_fuse(labels, scores) == 0
        empirical = fused_correct / trials
        theory = subject_accuracy_estimate(p, k)
        assert theory > empirical  # tie credit makes the closed form optimistic
