import math

import numpy as np
import pytest

from conftest import make_logistic
from shrinkfuse.errors import DimensionMismatch
from shrinkfuse.fusion import METHODS, FusionConfig, pooled_fit, run_all_estimators
from shrinkfuse.glm import Dataset, Source, fit_logistic
from shrinkfuse.weights import WeightKind, WeightMatrix


@pytest.fixture(scope="module")
def self_pair():
    rng = np.random.default_rng(17)
    small = make_logistic(rng, 150, [0.2, 0.5, -0.4, 0.3, 0.1])
    big = Dataset(small.y.copy(), small.X.copy(), Source.BIG, small.names)
    return small, big


@pytest.fixture(scope="module")
def self_report(self_pair):
    small, big = self_pair
    cfg = FusionConfig(bootstrap_replicates=100, l1_se_replicates=100, cv_folds=5, n_lambda=20, seed=5)
    return run_all_estimators(small, big, cfg)


def test_self_fusion_estimates_agree(self_report):
    r = self_report
    assert not r.failures
    assert r.methods == METHODS
    for a in METHODS:
        for b in METHODS:
            gap = np.abs(r.estimates[a] - r.estimates[b])
            joint = 2 * np.sqrt(r.ses[a] ** 2 + r.ses[b] ** 2)
            assert np.all(gap <= joint), (a, b)


def test_table_shape(self_report):
    assert self_report.p == 5
    assert all(self_report.estimates[m].shape == (5,) for m in METHODS)
    assert all(self_report.ses[m].shape == (5,) for m in METHODS)


def test_identity_override_equals_small(seed42_pair):
    small, big = seed42_pair
    I = WeightMatrix(np.eye(4), WeightKind.IDENTITY)
    cfg = FusionConfig(methods=("Small", "W2", "Wh", "JSP"), weight_overrides={"W2": I, "Wh": I, "JSP": I})
    r = run_all_estimators(small, big, cfg)
    for m in ("W2", "Wh", "JSP"):
        np.testing.assert_array_equal(r.estimates[m], r.estimates["Small"])
        np.testing.assert_array_equal(r.ses[m], r.ses["Small"])


def test_weighted_columns_without_small_column(seed42_pair):
    small, big = seed42_pair
    r = run_all_estimators(small, big, FusionConfig(methods=("W2",), compute_se=False))
    assert set(r.estimates) == {"W2"} and r.ses["W2"] is None


def test_weighted_se_never_exceed_small(seed42_pair):
    small, big = seed42_pair
    r = run_all_estimators(small, big, FusionConfig(methods=("Small", "W2", "Wh", "JSP"), moment_provider="truncated"))
    for m in ("W2", "Wh", "JSP"):
        assert np.all(r.ses[m] <= r.ses["Small"] + 1e-12)


def test_failed_method_is_recorded():
    rng = np.random.default_rng(0)
    # separated small data: Small, W2 and Wh fail, Big and Pool still run
    x = np.r_[-1 - rng.random(10), 1 + rng.random(10)]
    small = Dataset(np.r_[np.zeros(10), np.ones(10)], np.column_stack([np.ones(20), x]))
    big = make_logistic(rng, 300, [0.0, 1.0], Source.BIG)
    r = run_all_estimators(small, big, FusionConfig(methods=("Small", "Big", "Pool", "W2", "Wh")))
    assert {"Small", "W2", "Wh"} <= set(r.failures)
    assert "Separation" in r.failures["Small"]
    assert set(r.estimates) == {"Big", "Pool"}


def test_dimension_mismatch():
    rng = np.random.default_rng(1)
    with pytest.raises(DimensionMismatch):
        run_all_estimators(make_logistic(rng, 50, [0, 1]), make_logistic(rng, 50, [0, 1, 1]))


def test_pooled_duplicate_data(self_pair):
    small, big = self_pair
    np.testing.assert_allclose(pooled_fit(small, big).beta_hat, fit_logistic(small).beta_hat, atol=1e-10)


def test_pooled_intercept_only():
    small = Dataset(np.r_[np.ones(3), np.zeros(7)], np.ones((10, 1)))
    big = Dataset(np.r_[np.ones(12), np.zeros(18)], np.ones((30, 1)), Source.BIG)
    assert pooled_fit(small, big).beta_hat[0] == pytest.approx(math.log(15 / 25), abs=1e-9)


def test_pooled_tracks_big_when_big_dominates():
    rng = np.random.default_rng(6)
    small = make_logistic(rng, 50, [0.5, -0.5, 0.2])
    big = make_logistic(rng, 5000, [0.2, 0.0, 0.6], Source.BIG)
    fB = fit_logistic(big)
    assert np.all(np.abs(pooled_fit(small, big).beta_hat - fB.beta_hat) <= fB.se)


def test_unknown_method():
    with pytest.raises(ValueError):
        FusionConfig(methods=("Small", "W3"))
