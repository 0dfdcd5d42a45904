"""Logistic regression by iteratively reweighted least squares.

Everything downstream (fusion weights, penalized fits, the simulation engine)
is built on the quantities computed here: the MLE, the Fisher information
``X^T V X`` with ``V = diag(mu (1 - mu))``, and its inverse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import DimensionMismatch, NonBinaryResponse, NotConverged, RankDeficient, Separation

_MU_CLAMP = 1e-12


class Source(enum.Enum):
    SMALL = "S"
    BIG = "B"


@dataclass(frozen=True)
class Dataset:
    """Binary response and design matrix for one data source.

    The first column of ``X`` is the intercept by convention; nothing here
    enforces it, so intercept-free designs also work.
    """

    y: np.ndarray
    X: np.ndarray
    source_tag: Source = Source.SMALL
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has shape {X.shape} but y has length {y.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryResponse("response must contain only 0 and 1")
        n, p = X.shape
        if n < p + 1:
            raise DimensionMismatch(f"need n >= p + 1 rows, got n={n}, p={p}")
        names = self.names
        if names is None:
            names = ("(Intercept)",) + tuple(f"x{j}" for j in range(1, p))
        elif len(names) != p:
            raise DimensionMismatch(f"{len(names)} names for {p} columns")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.y[rows], self.X[rows], self.source_tag, self.names)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    tol: float = 1e-8
    divergence_bound: float = 30.0
    max_halvings: int = 20
    # When False a fit that hits max_iter is returned with converged=False.
    strict: bool = True


@dataclass(frozen=True)
class LogisticFit:
    beta_hat: np.ndarray
    info: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    mu_hat: np.ndarray = field(repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]


def predict_mu(beta, X) -> np.ndarray:
    return expit(np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float))


def log_likelihood(beta, X, y) -> float:
    eta = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(beta, X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X.T @ (y - predict_mu(beta, X))


def information_matrix(beta, X) -> np.ndarray:
    """Fisher information ``X^T diag(mu (1 - mu)) X`` evaluated at ``beta``."""
    X = np.asarray(X, dtype=float)
    mu = predict_mu(beta, X)
    info = X.T @ (X * (mu * (1.0 - mu))[:, None])
    return 0.5 * (info + info.T)


def deviance(fit: LogisticFit, data: Dataset) -> float:
    return deviance_at(fit.beta_hat, data.X, data.y)


def deviance_at(beta, X, y) -> float:
    mu = np.clip(predict_mu(beta, X), _MU_CLAMP, 1.0 - _MU_CLAMP)
    return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log1p(-mu)))


def _check_rank(X):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficient(f"design matrix with {X.shape[1]} columns is not of full column rank")


def fit_logistic(data: Dataset, opts: FitOptions | None = None) -> LogisticFit:
    """Maximum likelihood fit by IRLS (Newton) with step halving.

    Starts at zero. Raises ``Separation`` when a coefficient or linear
    predictor exceeds ``opts.divergence_bound`` or the deviance collapses
    to zero while coefficients keep growing.
    """
    opts = opts or FitOptions()
    X, y = data.X, data.y
    _check_rank(X)
    n, p = X.shape
    bound = opts.divergence_bound

    beta = np.zeros(p)
    ll = log_likelihood(beta, X, y)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        mu = predict_mu(beta, X)
        grad = X.T @ (y - mu)
        if np.max(np.abs(grad)) < opts.tol:
            converged = True
            it -= 1
            break
        info = X.T @ (X * (mu * (1.0 - mu))[:, None])
        try:
            step = scipy.linalg.cho_solve(scipy.linalg.cho_factor(info), grad)
        except np.linalg.LinAlgError:
            raise Separation("information matrix became singular; fitted probabilities saturated")

        t = 1.0
        new = beta + step
        ll_new = log_likelihood(new, X, y)
        for _ in range(opts.max_halvings):
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            t *= 0.5
            new = beta + t * step
            ll_new = log_likelihood(new, X, y)

        if np.max(np.abs(new)) > bound:
            raise Separation(f"coefficient exceeded divergence bound {bound:g} (iteration {it})")
        if -2.0 * ll_new < 1e-6 and np.max(np.abs(new)) > np.max(np.abs(beta)):
            raise Separation("deviance vanished with growing coefficients")
        beta, ll = new, ll_new

    if not converged:
        if opts.strict:
            raise NotConverged(f"score tolerance {opts.tol:g} not met in {opts.max_iter} iterations")
    if np.max(np.abs(X @ beta)) > bound:
        raise Separation("fitted linear predictor saturated; data are (quasi-)separated")

    info = information_matrix(beta, X)
    try:
        cov = scipy.linalg.cho_solve(scipy.linalg.cho_factor(info), np.eye(p))
    except np.linalg.LinAlgError:
        raise Separation("information matrix singular at the fitted coefficients")
    cov = 0.5 * (cov + cov.T)
    return LogisticFit(
        beta_hat=beta,
        info=info,
        cov=cov,
        loglik=log_likelihood(beta, X, y),
        converged=converged,
        iterations=it,
        mu_hat=predict_mu(beta, X),
    )
