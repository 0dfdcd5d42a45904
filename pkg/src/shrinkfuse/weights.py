"""Fusion weights for combining the small-data and big-data MLEs.

Every estimator here has the form ``W beta_S + (I - W) beta_B`` for a p x p
weight ``W``.  The weights differ in how ``W`` is chosen:

* ``compute_w2``: minimizes the leading-order MSE, which only needs the
  two information matrices and the discrepancy ``gamma``.
* ``compute_wh``: minimizes the MSE including the n^-1 .. n^-2 terms of the
  stochastic expansion of each MLE.  The moments of those terms come from
  an ``ExpansionMoments`` provider (closed-form bias or parametric bootstrap).
* ``compute_js``: diagonal James-Stein weights from per-coefficient Wald
  statistics.
* ``compute_w_lambda``: the weight an L2-penalized joint fit is
  asymptotically equivalent to.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateStatistic, DimensionMismatch, InvalidDimension, NonPositiveDefinite, NotConverged, Separation
from .glm import Dataset, FitOptions, LogisticFit, fit_logistic

SYMMETRY_TOL = 1e-10
SINGULAR_COND = 1e12


class WeightKind(enum.Enum):
    IDENTITY = "Identity"
    POOLED_APPROX = "PooledApprox"
    W2 = "W2"
    WH = "Wh"
    JS = "JS"
    JSP = "JSP"
    WLAMBDA = "WLambda"


@dataclass(frozen=True)
class WeightMatrix:
    W: np.ndarray
    kind: WeightKind
    # Set when compute_wh had to fall back to the second-order weight.
    fallback: bool = False

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"weight matrix must be square, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise NonPositiveDefinite(f"{self.kind.value} weight has non-finite entries")
        if self.kind in (WeightKind.JS, WeightKind.JSP):
            if np.any(W - np.diag(np.diag(W))):
                raise ValueError("James-Stein weights must be diagonal")
        if self.kind is WeightKind.JSP:
            d = np.diag(W)
            if np.any(d < 0) or np.any(d >= 1):
                raise ValueError("positive-part James-Stein weights must lie in [0, 1)")
        object.__setattr__(self, "W", W)

    @property
    def p(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class SourceMoments:
    """Moments of the higher-order expansion terms for one source.

    ``c``, ``d``, ``e`` are the means of the n^-1, n^-3/2, n^-2 terms;
    ``v`` is the covariance of the n^-1 term; ``rho`` and ``nu`` are the
    cross-covariances of the leading n^-1/2 term with the n^-1 and n^-3/2
    terms (``E[B C^T]`` and ``E[B D^T]``).
    """

    c: np.ndarray
    v: np.ndarray
    d: np.ndarray
    e: np.ndarray
    rho: np.ndarray
    nu: np.ndarray
    replicates: int | None = None

    def __post_init__(self):
        p = np.asarray(self.c).shape[0]
        for name in ("c", "d", "e"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (p,):
                raise DimensionMismatch(f"moment {name} has shape {arr.shape}, expected ({p},)")
            object.__setattr__(self, name, arr)
        for name in ("v", "rho", "nu"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (p, p):
                raise DimensionMismatch(f"moment {name} has shape {arr.shape}, expected ({p}, {p})")
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.c.shape[0]

    @classmethod
    def zeros(cls, p: int) -> "SourceMoments":
        return cls(np.zeros(p), np.zeros((p, p)), np.zeros(p), np.zeros(p), np.zeros((p, p)), np.zeros((p, p)))


@dataclass(frozen=True)
class ExpansionMoments:
    small: SourceMoments
    big: SourceMoments
    provider: str = "truncated"

    def __post_init__(self):
        if self.small.p != self.big.p:
            raise DimensionMismatch("small and big moments have different dimension")

    @classmethod
    def zeros(cls, p: int) -> "ExpansionMoments":
        return cls(SourceMoments.zeros(p), SourceMoments.zeros(p), "truncated")


@dataclass(frozen=True)
class FusionInput:
    fit_small: LogisticFit
    fit_big: LogisticFit
    gamma_hat: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.fit_small.p != self.fit_big.p:
            raise DimensionMismatch("small and big fits have different numbers of coefficients")
        if not (self.fit_small.converged and self.fit_big.converged):
            raise NotConverged("fusion needs two converged fits")
        object.__setattr__(self, "gamma_hat", self.fit_big.beta_hat - self.fit_small.beta_hat)


def _check_symmetric(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise NonPositiveDefinite(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def _cholesky(M, name):
    try:
        return scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite(f"{name} is not positive definite")


def spd_inverse(M, name="matrix") -> np.ndarray:
    M = _check_symmetric(M, name)
    inv = scipy.linalg.cho_solve(_cholesky(M, name), np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


def _right_divide(N, D):
    """Return ``N @ inv(D)`` for symmetric ``D``, via Cholesky when possible."""
    D = 0.5 * (D + D.T)
    try:
        factor = scipy.linalg.cho_factor(D)
        return scipy.linalg.cho_solve(factor, N.T).T
    except np.linalg.LinAlgError:
        return np.linalg.solve(D.T, N.T).T


def _conform(gamma, *mats):
    gamma = np.asarray(gamma, dtype=float).ravel()
    p = gamma.shape[0]
    for M in mats:
        if np.shape(M) != (p, p):
            raise DimensionMismatch(f"expected {p}x{p} matrix, got shape {np.shape(M)}")
    return gamma


def compute_w2(gamma, sigma_S, sigma_B) -> WeightMatrix:
    """Second-order optimal weight ``(gg^T + S_B^-1)(gg^T + S_B^-1 + S_S^-1)^-1``.

    ``sigma_S`` and ``sigma_B`` are Fisher information matrices.  The
    product is ordered so that ``W beta_S + (I - W) beta_B`` minimizes
    ``tr E[(beta_W - beta)(beta_W - beta)^T]``; the two orderings agree
    whenever the factors commute.
    """
    gamma = _conform(gamma, sigma_S, sigma_B)
    S_inv = spd_inverse(sigma_S, "sigma_S")
    B_inv = spd_inverse(sigma_B, "sigma_B")
    M = np.outer(gamma, gamma) + B_inv
    return WeightMatrix(_right_divide(M, M + S_inv), WeightKind.W2)


def wh_blocks(gamma, sigma_S, sigma_B, moments: ExpansionMoments, n_S, n_B):
    """The four second-moment blocks ``A00, A01, A10, A11`` of the higher-order MSE.

    ``A00 = E[a a^T]``, ``A01 = E[a b^T]``, ``A10 = E[b a^T]``,
    ``A11 = E[b b^T]`` with ``a = beta_S - beta`` and ``b = beta_B - beta``.
    """
    gamma = _conform(gamma, sigma_S, sigma_B)
    if moments.small.p != gamma.shape[0]:
        raise DimensionMismatch("moments do not match the number of coefficients")
    if n_S < 1 or n_B < 1:
        raise InvalidDimension("sample sizes must be positive")
    S_inv = spd_inverse(sigma_S, "sigma_S")
    B_inv = spd_inverse(sigma_B, "sigma_B")
    s, b = moments.small, moments.big
    g = gamma
    nS1, nS32, nS2 = n_S ** -1.0, n_S ** -1.5, n_S ** -2.0
    nB1, nB32, nB2 = n_B ** -1.0, n_B ** -1.5, n_B ** -2.0
    out = np.outer

    A00 = (S_inv + nS2 * (out(s.c, s.c) + s.v) + nS32 * s.rho + nS32 * s.rho.T
           + nS2 * s.nu + nS2 * s.nu.T)
    A01 = nS1 * out(s.c, g) + nS32 * out(s.d, g) + nS2 * out(s.e, g) + nS1 * nB1 * out(s.c, b.c)
    A10 = nS1 * out(g, s.c) + nS32 * out(g, s.d) + nS2 * out(g, s.e) + nS1 * nB1 * out(b.c, s.c)
    A11 = (out(g, g) + B_inv + nB2 * (out(b.c, b.c) + b.v) + nB1 * out(g, b.c) + nB1 * out(b.c, g)
           + nB32 * out(g, b.d) + nB32 * out(b.d, g) + nB2 * out(g, b.e) + nB2 * out(b.e, g)
           + nB32 * b.rho + nB32 * b.rho.T + nB2 * b.nu + nB2 * b.nu.T)
    return A00, A01, A10, A11


def compute_wh(gamma, sigma_S, sigma_B, moments: ExpansionMoments, n_S, n_B) -> WeightMatrix:
    """Higher-order optimal weight ``(A11 - A10)(A00 + A11 - A01 - A10)^-1``.

    Falls back to ``compute_w2`` (with ``fallback=True``) when the block sum
    has condition number above 1e12.
    """
    A00, A01, A10, A11 = wh_blocks(gamma, sigma_S, sigma_B, moments, n_S, n_B)
    D = A00 + A11 - A01 - A10
    if not np.all(np.isfinite(D)) or np.linalg.cond(D) > SINGULAR_COND:
        w2 = compute_w2(gamma, sigma_S, sigma_B)
        return WeightMatrix(w2.W, WeightKind.WH, fallback=True)
    return WeightMatrix(_right_divide(A11 - A10, D), WeightKind.WH)


def js_constant(p: int, n: int) -> float:
    return (p - 2) * (n - 2) / (p * n)


def compute_js(beta_S, beta_B, cov_S, cov_B, p: int, n: int, positive_part: bool = True) -> WeightMatrix:
    """Diagonal James-Stein weights ``1 - c / F_i`` (clamped at 0 when ``positive_part``).

    ``F_i`` is the Wald statistic for ``beta_S[i] == beta_B[i]`` and
    ``c = (p - 2)(n - 2) / (p n)``.
    """
    if p < 3:
        raise InvalidDimension(f"James-Stein shrinkage needs p >= 3, got p={p}")
    beta_S = np.asarray(beta_S, dtype=float)
    beta_B = np.asarray(beta_B, dtype=float)
    var = np.diag(cov_S) + np.diag(cov_B)
    if beta_S.shape != (p,) or beta_B.shape != (p,) or var.shape != (p,):
        raise DimensionMismatch("James-Stein inputs do not match p")
    if np.any(var <= 0):
        raise DegenerateStatistic("covariance diagonals must be positive")
    c = js_constant(p, n)
    F = (beta_S - beta_B) ** 2 / var
    zero = F == 0
    if np.any(zero) and not positive_part:
        raise DegenerateStatistic(f"Wald statistic is zero for coefficient(s) {np.flatnonzero(zero).tolist()}")
    with np.errstate(divide="ignore"):
        w = 1.0 - c / F
    if positive_part:
        w = np.where(zero, 0.0, np.maximum(w, 0.0))
        return WeightMatrix(np.diag(w), WeightKind.JSP)
    return WeightMatrix(np.diag(w), WeightKind.JS)


def compute_w_lambda(sigma_S, sigma_B, sigma_T, lam: float) -> WeightMatrix:
    """Weight matched by the L2 fit with penalty Hessian ``lam * sigma_T`` on gamma.

    ``(S_S + lam S_T + lam S_T S_B^-1 S_S)^-1 (S_S + lam S_T S_B^-1 S_S)``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    sigma_S = _check_symmetric(sigma_S, "sigma_S")
    sigma_B = _check_symmetric(sigma_B, "sigma_B")
    sigma_T = _check_symmetric(sigma_T, "sigma_T")
    p = sigma_S.shape[0]
    if sigma_B.shape != (p, p) or sigma_T.shape != (p, p):
        raise DimensionMismatch("information matrices do not conform")
    _cholesky(sigma_S, "sigma_S")
    B_inv = spd_inverse(sigma_B, "sigma_B")
    if np.min(np.linalg.eigvalsh(sigma_T)) < -SYMMETRY_TOL * max(1.0, np.max(np.abs(sigma_T))):
        raise NonPositiveDefinite("sigma_T is not positive semidefinite")
    K = lam * sigma_T @ B_inv @ sigma_S
    W = np.linalg.solve(sigma_S + lam * sigma_T + K, sigma_S + K)
    return WeightMatrix(W, WeightKind.WLAMBDA)


def identity_weight(p: int) -> WeightMatrix:
    return WeightMatrix(np.eye(p), WeightKind.IDENTITY)


def pooled_approx_weight(p: int, n_S: int, n_B: int) -> WeightMatrix:
    return WeightMatrix(n_S / (n_S + n_B) * np.eye(p), WeightKind.POOLED_APPROX)


def combine(W, beta_S, beta_B) -> np.ndarray:
    W = W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    beta_S = np.asarray(beta_S, dtype=float)
    beta_B = np.asarray(beta_B, dtype=float)
    p = beta_S.shape[0]
    if W.shape != (p, p) or beta_B.shape != (p,):
        raise DimensionMismatch("weight and coefficient dimensions do not conform")
    return W @ beta_S + (np.eye(p) - W) @ beta_B


def apply_weight(inp: FusionInput, W: WeightMatrix) -> np.ndarray:
    return combine(W, inp.fit_small.beta_hat, inp.fit_big.beta_hat)


def weighted_se(W, cov_S, cov_B) -> np.ndarray:
    """Standard errors of ``W beta_S + (I - W) beta_B`` holding ``W`` fixed."""
    W = W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    R = np.eye(W.shape[0]) - W
    var = W @ cov_S @ W.T + R @ cov_B @ R.T
    return np.sqrt(np.clip(np.diag(var), 0.0, None))


# --------------------------------------------------------------------------
# Moment providers
# --------------------------------------------------------------------------


def analytic_moments(fit: LogisticFit, data: Dataset) -> SourceMoments:
    """Closed-form first-order bias only; all other moments truncated to zero.

    The O(1/n) bias of the logistic MLE is ``I^-1 X^T (h * (mu - 1/2))``
    with ``h`` the hat-matrix diagonal of the weighted design, so
    ``c = n * bias``.
    """
    X, mu = data.X, fit.mu_hat
    w = mu * (1.0 - mu)
    h = np.einsum("ij,jk,ik->i", X, fit.cov, X) * w
    bias = fit.cov @ (X.T @ (h * (mu - 0.5)))
    moments = SourceMoments.zeros(fit.p)
    return SourceMoments(data.n * bias, moments.v, moments.d, moments.e, moments.rho, moments.nu)


def estimate_moments_bootstrap(fit: LogisticFit, data: Dataset, replicates: int = 200, seed: int = 0,
                               opts: FitOptions | None = None) -> SourceMoments:
    """Parametric-bootstrap estimates of ``c``, ``v`` and ``rho``.

    Each replicate draws ``y*`` from the fitted probabilities, refits, and
    forms the remainder ``R* = beta* - beta_hat - cov X^T (y* - mu_hat)``
    beyond the linear term.  ``d``, ``e`` and ``nu`` are left at zero.
    Replicates whose refit separates are discarded; more than 20% discarded
    raises ``Separation``.
    """
    if replicates < 50:
        raise ValueError("need at least 50 bootstrap replicates")
    if not fit.converged:
        raise NotConverged("bootstrap moments need a converged fit")
    X, mu, n = data.X, fit.mu_hat, data.n
    streams = np.random.SeedSequence(seed).spawn(replicates)
    lin, rem = [], []
    for ss in streams:
        rng = np.random.default_rng(ss)
        y_star = (rng.random(n) < mu).astype(float)
        try:
            refit = fit_logistic(Dataset(y_star, X, data.source_tag, data.names), opts)
        except (Separation, NotConverged):
            continue
        l = fit.cov @ (X.T @ (y_star - mu))
        lin.append(l)
        rem.append(refit.beta_hat - fit.beta_hat - l)
    used = len(rem)
    if replicates - used > 0.2 * replicates:
        raise Separation(f"{replicates - used} of {replicates} bootstrap refits failed")
    lin = np.asarray(lin)
    rem = np.asarray(rem)
    rc = rem - rem.mean(axis=0)
    lc = lin - lin.mean(axis=0)
    cov_rr = rc.T @ rc / (used - 1)
    cov_lr = lc.T @ rc / (used - 1)
    p = fit.p
    return SourceMoments(
        c=n * rem.mean(axis=0),
        v=n ** 2 * 0.5 * (cov_rr + cov_rr.T),
        d=np.zeros(p),
        e=np.zeros(p),
        rho=n ** 1.5 * cov_lr,
        nu=np.zeros((p, p)),
        replicates=used,
    )


MOMENT_PROVIDERS = ("truncated", "analytic", "bootstrap")


def estimate_moments(fit_small: LogisticFit, small: Dataset, fit_big: LogisticFit, big: Dataset,
                     provider: str = "bootstrap", replicates: int = 200, seed: int = 0) -> ExpansionMoments:
    """Moments for both sources from the named provider.

    ``truncated`` drops every term beyond the leading one (so W_h equals
    W_2), ``analytic`` keeps only the closed-form first-order bias, and
    ``bootstrap`` estimates c, v and rho by parametric bootstrap.
    """
    if provider == "truncated":
        return ExpansionMoments.zeros(fit_small.p)
    if provider == "analytic":
        return ExpansionMoments(analytic_moments(fit_small, small), analytic_moments(fit_big, big), provider)
    if provider == "bootstrap":
        seeds = np.random.SeedSequence(seed).generate_state(2)
        return ExpansionMoments(
            estimate_moments_bootstrap(fit_small, small, replicates, int(seeds[0])),
            estimate_moments_bootstrap(fit_big, big, replicates, int(seeds[1])),
            provider,
        )
    raise ValueError(f"unknown moment provider {provider!r}; choose from {MOMENT_PROVIDERS}")
