import random

import pytest

from brvst import experiments as ex
from brvst.arv import ArvConfig
from brvst.events import default_registry, exact_match


@pytest.mark.parametrize("values,n", [([4, 3, 2, 1], 0), ([4, 5, 2, 1], 1), ([1, 2, 3, 4], 3), ([2, 2, 2], 0)])
def test_inversions(values, n):
    assert ex.inversions(values) == n


def test_inversion_tolerance():
    assert ex.inversions([4, 4.05, 3], tol=0.1) == 0
    assert ex.non_increasing([4, 5, 3, 2], max_inversions=1)
    assert not ex.non_increasing([4, 5, 3, 4], max_inversions=1)


def test_strictly_decreasing():
    assert ex.strictly_decreasing([3, 2, 1])
    assert not ex.strictly_decreasing([3, 3, 1])


@pytest.mark.parametrize("values,want", [([3, 1, 2], True), ([1, 2, 3], False), ([3, 2, 1], False),
                                         ([2, 1, 1, 3], True), ([1, 1], False), ([1, 3, 1], False)])
def test_interior_minimum(values, want):
    assert ex.interior_minimum(values) is want


def test_trend_checks_table():
    assert set(ex.TREND_CHECKS) == {"non_increasing", "non_increasing_1", "strictly_decreasing", "interior_minimum"}
    assert ex.TREND_CHECKS["non_increasing_1"]([5, 6, 4])


def test_sample_pairs_share_attributes():
    reg = default_registry()
    for pr, sr in ex.sample_pairs(random.Random(2), reg, 500):
        assert set(sr) <= set(pr) and 1 <= len(pr) <= 3


def test_point_publications():
    pairs = ex.sample_pairs(random.Random(2), default_registry(), 200, pub_points=True)
    assert all(lo == hi for pr, _ in pairs for lo, hi in pr.values())


def test_accuracy_counts():
    reg = default_registry()
    pairs = ex.sample_pairs(random.Random(3), reg, 2000)
    r = ex.arv_accuracy(ArvConfig(alpha=0.9), pairs, reg)
    assert r.true_pos + r.false_pos + r.false_neg + r.true_neg == 2000
    real = sum(exact_match(reg.publication(i, 0, p), reg.subscription(i, 0, s)) for i, (p, s) in enumerate(pairs))
    assert r.true_pos + r.false_neg == real


def test_fp_falls_with_alpha():
    reps = ex.fp_sweep([0.7, 0.9], n=3000, seed=4)
    assert reps[0].fp_rate > reps[1].fp_rate


def test_aggregation_with_churn_still_aggregates():
    r = ex.aggregation_experiment(600, churn=0.3, seed=6)
    assert r.changes == 600 and r.update_fraction < 0.5 and r.storage_ratio < 1


def test_uncovered_workload_updates_more():
    covered = ex.aggregation_experiment(600, covered=0.9, seed=6)
    fresh = ex.aggregation_experiment(600, covered=0.0, seed=6)
    assert fresh.update_fraction > covered.update_fraction
