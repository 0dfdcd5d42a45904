import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings, strategies as st

from conftest import make_logistic
from shrinkfuse.errors import DimensionMismatch, NonBinaryResponse, NotConverged, RankDeficient, Separation
from shrinkfuse.glm import (
    Dataset,
    FitOptions,
    deviance,
    deviance_at,
    fit_logistic,
    information_matrix,
    log_likelihood,
    predict_mu,
    score,
)


def reference_fit(X, y):
    """Trust-region Newton on the exact log-likelihood, with loop-summed derivatives."""

    def f(b):
        return -sum(yi * (xi @ b) - math.log1p(math.exp(xi @ b)) if xi @ b < 30 else yi * (xi @ b) - xi @ b
                    for xi, yi in zip(X, y))

    def g(b):
        return -sum((yi - 1.0 / (1.0 + math.exp(-(xi @ b)))) * xi for xi, yi in zip(X, y))

    def h(b):
        out = np.zeros((X.shape[1], X.shape[1]))
        for xi in X:
            m = 1.0 / (1.0 + math.exp(-(xi @ b)))
            out += m * (1 - m) * np.outer(xi, xi)
        return out

    res = scipy.optimize.minimize(f, np.zeros(X.shape[1]), jac=g, hess=h, method="trust-exact",
                                  options={"gtol": 1e-12, "maxiter": 500})
    return res.x, -res.fun


def test_intercept_only_closed_form():
    data = Dataset(np.array([1.0, 1, 0, 0, 0]), np.ones((5, 1)))
    fit = fit_logistic(data)
    assert fit.beta_hat[0] == pytest.approx(math.log(0.4 / 0.6), abs=1e-10)
    assert fit.beta_hat[0] == pytest.approx(-0.405465, abs=1e-6)
    assert fit.converged


def test_separated_data_raises():
    X = np.column_stack([np.ones(4), [-1.0, -1, 1, 1]])
    with pytest.raises(Separation):
        fit_logistic(Dataset(np.array([0.0, 0, 1, 1]), X))


def test_seed42_matches_reference(seed42_data):
    fit = fit_logistic(seed42_data)
    ref_beta, ref_ll = reference_fit(seed42_data.X, seed42_data.y)
    np.testing.assert_allclose(fit.beta_hat, ref_beta, atol=1e-6, rtol=0)
    assert abs(fit.loglik - ref_ll) < 1e-8


def test_fifty_random_instances_match_reference():
    rng = np.random.default_rng(2024)
    done = 0
    while done < 50:
        p = int(rng.integers(2, 6))
        n = int(rng.integers(40, 120))
        beta = rng.normal(0, 0.6, p)
        data = make_logistic(rng, n, beta)
        try:
            fit = fit_logistic(data)
        except Separation:
            continue
        _, ref_ll = reference_fit(data.X, data.y)
        assert abs(fit.loglik - ref_ll) < 1e-8
        done += 1


def test_score_vanishes_at_mle(seed42_data):
    fit = fit_logistic(seed42_data)
    assert np.max(np.abs(score(fit.beta_hat, seed42_data.X, seed42_data.y))) < 1e-8


def test_score_and_information_match_finite_differences(seed42_data):
    X, y = seed42_data.X, seed42_data.y
    b = np.array([0.1, -0.3, 0.4])
    eps = 1e-6
    E = np.eye(3)
    num_grad = np.array([(log_likelihood(b + eps * e, X, y) - log_likelihood(b - eps * e, X, y)) / (2 * eps) for e in E])
    np.testing.assert_allclose(score(b, X, y), num_grad, atol=1e-6)
    num_hess = np.array([(score(b + eps * e, X, y) - score(b - eps * e, X, y)) / (2 * eps) for e in E])
    np.testing.assert_allclose(information_matrix(b, X), -num_hess, atol=1e-6)


def test_information_single_row():
    assert information_matrix(np.zeros(1), np.ones((1, 1)))[0, 0] == 0.25


def test_information_vanishes_at_saturation():
    X = np.column_stack([np.ones(5), np.linspace(1, 2, 5)])
    assert np.max(np.abs(information_matrix(np.array([0.0, 400.0]), X))) < 1e-100


def test_information_matches_summation():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    expected = np.zeros((3, 3))
    for xi in X:
        m = 1 / (1 + math.exp(-(xi @ b)))
        expected += m * (1 - m) * np.outer(xi, xi)
    np.testing.assert_allclose(information_matrix(b, X), expected, rtol=1e-12, atol=1e-14)


def test_predict_mu():
    X = np.random.default_rng(0).standard_normal((10, 2))
    assert np.all(predict_mu(np.zeros(2), X) == 0.5)
    assert predict_mu(np.array([math.log(9.0)]), np.ones((1, 1)))[0] == pytest.approx(0.9, abs=1e-15)
    b = np.array([0.7, -1.2])
    expected = [1 / (1 + math.exp(-(xi @ b))) for xi in X]
    np.testing.assert_allclose(predict_mu(b, X), expected, rtol=1e-12, atol=0)


def test_deviance_values(seed42_data):
    X = np.column_stack([np.ones(4), [0.1, 0.2, 0.3, 0.4]])
    y = np.array([0.0, 1, 0, 1])
    assert deviance_at(np.zeros(2), X, y) == pytest.approx(8 * math.log(2), abs=1e-12)
    assert deviance_at(np.zeros(2), X, y) == pytest.approx(5.5452, abs=1e-4)
    Xs = np.column_stack([np.ones(4), [-1.0, -1, 1, 1]])
    assert deviance_at(np.array([0.0, 50.0]), Xs, np.array([0.0, 0, 1, 1])) < 1e-10
    fit = fit_logistic(seed42_data)
    direct = 0.0
    for xi, yi in zip(seed42_data.X, seed42_data.y):
        m = 1 / (1 + math.exp(-(xi @ fit.beta_hat)))
        direct += -2 * (yi * math.log(m) + (1 - yi) * math.log(1 - m))
    assert deviance(fit, seed42_data) == pytest.approx(direct, abs=1e-10)


def test_dataset_validation():
    with pytest.raises(NonBinaryResponse):
        Dataset(np.array([0.0, 2.0, 1.0]), np.ones((3, 1)))
    with pytest.raises(DimensionMismatch):
        Dataset(np.array([0.0, 1.0, 1.0]), np.ones((2, 1)))


def test_rank_deficient_design():
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(RankDeficient):
        fit_logistic(Dataset(np.array([0.0, 1, 0, 1, 1, 0]), X))


def test_not_converged_when_strict(seed42_data):
    with pytest.raises(NotConverged):
        fit_logistic(seed42_data, FitOptions(max_iter=1))
    fit = fit_logistic(seed42_data, FitOptions(max_iter=1, strict=False))
    assert not fit.converged


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(30, 150))
def test_mle_properties(seed, n):
    rng = np.random.default_rng(seed)
    data = make_logistic(rng, n, [0.1, 0.5, -0.3])
    try:
        fit = fit_logistic(data)
    except Separation:
        return
    # information is symmetric positive definite and covariance is its inverse
    assert np.array_equal(fit.info, fit.info.T)
    assert np.min(np.linalg.eigvalsh(fit.info)) > 0
    np.testing.assert_allclose(fit.cov @ fit.info, np.eye(3), atol=1e-8)
    # the MLE beats nearby points
    for d in np.eye(3) * 1e-3:
        assert fit.loglik >= log_likelihood(fit.beta_hat + d, data.X, data.y)
        assert fit.loglik >= log_likelihood(fit.beta_hat - d, data.X, data.y)
