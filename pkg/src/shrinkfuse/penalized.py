"""Joint logistic fit of both sources with a penalty on the discrepancy only.

The model stacks the two sources with design rows ``(x_i, x_i 1{i in B})``
so the coefficients are ``(beta, gamma)``.  We minimize

    -loglik(beta, gamma) + pen_lambda(gamma)

with ``pen = lambda * sum|gamma_j|`` (L1) or ``lambda * sum gamma_j^2`` (L2).
The L2 penalty can instead act on the small-data linear predictor,
``lambda * ||X_S gamma||^2``.

Both penalties share one proximal Newton loop.  The beta block is
unpenalized, so each subproblem eliminates it exactly and leaves a p-dim
lasso quadratic in gamma, solved by coordinate descent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import DimensionMismatch, FoldTooSmall, InvalidDimension, NotConverged, Separation
from .glm import Dataset, deviance_at, fit_logistic
from .weights import WeightMatrix, compute_w_lambda, weighted_se


class PenaltyKind(enum.Enum):
    L1 = "L1"
    L2 = "L2"


class PenaltyTarget(enum.Enum):
    COEFFICIENTS = "Coefficients"
    SMALL_LINEAR_PREDICTOR = "SmallLinearPredictor"


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind = PenaltyKind.L1
    lam: float = 0.0
    target: PenaltyTarget = PenaltyTarget.COEFFICIENTS
    lambda_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if self.target is PenaltyTarget.SMALL_LINEAR_PREDICTOR and self.kind is not PenaltyKind.L2:
            raise ValueError("the small-linear-predictor penalty is only available for L2")
        if self.lambda_grid is not None:
            grid = tuple(float(x) for x in self.lambda_grid)
            if not grid or min(grid) <= 0 or any(a <= b for a, b in zip(grid, grid[1:])):
                raise ValueError("lambda_grid must be positive and strictly decreasing")
            object.__setattr__(self, "lambda_grid", grid)

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, float(lam), self.target, self.lambda_grid)


@dataclass(frozen=True)
class PenalizedFit:
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    lambda_used: float
    objective_value: float
    se: np.ndarray | None = None
    iterations: int = 0


def build_augmented_design(small: Dataset, big: Dataset):
    """Stacked response, the ``(x, x 1{B})`` design and penalty factors ``(0_p, 1_p)``."""
    if small.p != big.p:
        raise DimensionMismatch(f"small data has {small.p} columns, big data has {big.p}")
    p = small.p
    y = np.concatenate([small.y, big.y])
    Z = np.block([[small.X, np.zeros_like(small.X)], [big.X, big.X]])
    factors = np.concatenate([np.zeros(p), np.ones(p)])
    return y, Z, factors


@numba.njit(cache=True)
def _lasso_cd(Q, b, lam, u, tol, max_sweeps):
    # min 0.5 u'Qu - b'u + lam * |u|_1, updated in place
    p = b.shape[0]
    for sweep in range(max_sweeps):
        biggest = 0.0
        for j in range(p):
            r = b[j]
            for k in range(p):
                if k != j:
                    r -= Q[j, k] * u[k]
            if r > lam:
                new = (r - lam) / Q[j, j]
            elif r < -lam:
                new = (r + lam) / Q[j, j]
            else:
                new = 0.0
            change = abs(new - u[j]) * np.sqrt(Q[j, j])
            if change > biggest:
                biggest = change
            u[j] = new
        if biggest < tol:
            return sweep + 1
    return max_sweeps


class JointProblem:
    """Penalized two-source logistic problem on raw arrays (no validation)."""

    def __init__(self, X_S, y_S, X_B, y_B, kind: PenaltyKind, penalty_matrix=None):
        self.X_S, self.y_S, self.X_B, self.y_B = X_S, y_S, X_B, y_B
        self.p = X_S.shape[1]
        self.kind = kind
        self.P = penalty_matrix

    @classmethod
    def from_data(cls, small: Dataset, big: Dataset, spec: PenaltySpec) -> "JointProblem":
        if small.p != big.p:
            raise DimensionMismatch(f"small data has {small.p} columns, big data has {big.p}")
        return cls(small.X, small.y, big.X, big.y, spec.kind, penalty_matrix(small, spec))

    def subset_small(self, rows) -> "JointProblem":
        return JointProblem(self.X_S[rows], self.y_S[rows], self.X_B, self.y_B, self.kind, self.P)

    def _penalty(self, gamma, lam):
        if self.kind is PenaltyKind.L1:
            return lam * np.sum(np.abs(gamma))
        if self.P is None:
            return lam * gamma @ gamma
        return lam * gamma @ self.P @ gamma

    def loss(self, theta) -> float:
        p = self.p
        eta_S = self.X_S @ theta[:p]
        eta_B = self.X_B @ (theta[:p] + theta[p:])
        return float(np.sum(np.logaddexp(0.0, eta_S) - self.y_S * eta_S)
                     + np.sum(np.logaddexp(0.0, eta_B) - self.y_B * eta_B))

    def objective(self, theta, lam) -> float:
        return self.loss(theta) + self._penalty(theta[self.p:], lam)

    def smooth_gradient(self, theta, lam):
        """Gradient of the loss plus (for L2) the penalty."""
        p = self.p
        r_S = self.y_S - expit(self.X_S @ theta[:p])
        r_B = self.y_B - expit(self.X_B @ (theta[:p] + theta[p:]))
        gB = -(self.X_B.T @ r_B)
        g = np.concatenate([-(self.X_S.T @ r_S) + gB, gB])
        if self.kind is PenaltyKind.L2:
            gamma = theta[p:]
            g[p:] += 2.0 * lam * (gamma if self.P is None else self.P @ gamma)
        return g

    def lambda_max(self) -> float:
        """Smallest L1 lambda at which gamma = 0 is optimal."""
        pooled = fit_logistic(Dataset(np.concatenate([self.y_S, self.y_B]), np.vstack([self.X_S, self.X_B])))
        r_B = self.y_B - expit(self.X_B @ pooled.beta_hat)
        return float(np.max(np.abs(self.X_B.T @ r_B)))

    def _hessian_blocks(self, theta):
        p = self.p
        mu_S = expit(self.X_S @ theta[:p])
        mu_B = expit(self.X_B @ (theta[:p] + theta[p:]))
        A_S = self.X_S.T @ (self.X_S * (mu_S * (1.0 - mu_S))[:, None])
        A_B = self.X_B.T @ (self.X_B * (mu_B * (1.0 - mu_B))[:, None])
        return 0.5 * (A_S + A_S.T), 0.5 * (A_B + A_B.T)

    def _direction(self, theta, g, lam):
        p = self.p
        A_S, A_B = self._hessian_blocks(theta)
        H_bb = A_S + A_B
        if self.kind is PenaltyKind.L2:
            H_gg = A_B + 2.0 * lam * (np.eye(p) if self.P is None else self.P)
            H = np.block([[H_bb, A_B], [A_B, H_gg]])
            try:
                return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
            except np.linalg.LinAlgError:
                raise Separation("penalized information matrix became singular")
        # L1: eliminate the beta block and solve the gamma lasso subproblem.
        try:
            fac = scipy.linalg.cho_factor(H_bb)
        except np.linalg.LinAlgError:
            raise Separation("penalized information matrix became singular")
        HbbInv_Abg = scipy.linalg.cho_solve(fac, A_B)
        HbbInv_gb = scipy.linalg.cho_solve(fac, g[:p])
        Q = A_B - A_B @ HbbInv_Abg
        Q = 0.5 * (Q + Q.T)
        q = g[p:] - A_B @ HbbInv_gb
        gamma = theta[p:]
        b = Q @ gamma - q
        u = gamma.copy()
        _lasso_cd(Q, b, float(lam), u, 1e-13, 10000)
        d_g = u - gamma
        d_b = -(HbbInv_gb + HbbInv_Abg @ d_g)
        return np.concatenate([d_b, d_g])

    def fit(self, lam, start=None, tol=1e-9, max_iter=100, bound=30.0, history=None):
        """Proximal Newton with backtracking; ``history`` (a list) collects the objective per iteration."""
        p = self.p
        theta = np.zeros(2 * p) if start is None else np.array(start, dtype=float)
        F = self.objective(theta, lam)
        if history is not None:
            history.append(F)
        for it in range(1, max_iter + 1):
            g = self.smooth_gradient(theta, lam)
            d = self._direction(theta, g, lam)
            gamma = theta[p:]
            decrease = g @ d
            if self.kind is PenaltyKind.L1:
                decrease += lam * (np.sum(np.abs(gamma + d[p:])) - np.sum(np.abs(gamma)))
            if decrease >= 0.0 or np.max(np.abs(d)) < 1e-10:
                return theta, F, it
            t = 1.0
            for _ in range(40):
                cand = theta + t * d
                F_new = self.objective(cand, lam)
                if F_new <= F + 1e-4 * t * decrease:
                    break
                t *= 0.5
            else:
                return theta, F, it
            if np.max(np.abs(cand)) > bound:
                raise Separation(f"penalized coefficients exceeded divergence bound {bound:g}")
            step = np.max(np.abs(cand - theta))
            change = F - F_new
            theta, F = cand, F_new
            if history is not None:
                history.append(F)
            if change < tol and step < 1e-7:
                return theta, F, it
        raise NotConverged(f"penalized fit did not converge in {max_iter} iterations (lambda={lam:g})")

    def path(self, lambdas, start=None):
        """Fits along a decreasing lambda sequence with warm starts."""
        out = []
        theta = start
        for lam in lambdas:
            theta, F, _ = self.fit(lam, theta)
            out.append((theta, F))
        return out


def penalty_matrix(small: Dataset, spec: PenaltySpec):
    if spec.target is PenaltyTarget.SMALL_LINEAR_PREDICTOR:
        return small.X.T @ small.X
    return None


def default_lambda_grid(problem: JointProblem, n_lambda: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced decreasing grid of ``n_lambda`` values spanning a factor ``1/ratio``.

    For L1 the top is the smallest lambda that zeroes gamma.  The L2 penalty
    never zeroes gamma, so its top is set where the penalty Hessian is 50
    times the largest eigenvalue of the pooled information, which already
    pins gamma near zero.
    """
    if problem.kind is PenaltyKind.L1:
        top = problem.lambda_max()
    else:
        pooled = fit_logistic(Dataset(np.concatenate([problem.y_S, problem.y_B]),
                                      np.vstack([problem.X_S, problem.X_B])))
        info_max = np.max(np.linalg.eigvalsh(pooled.info))
        pen_min = 1.0 if problem.P is None else np.min(np.linalg.eigvalsh(problem.P))
        top = 50.0 * info_max / pen_min
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, n_lambda)


def equivalent_weight(small: Dataset, big: Dataset, spec: PenaltySpec, fit_small=None, fit_big=None) -> WeightMatrix:
    """Weight the L2 fit is asymptotically equivalent to.

    The penalty ``lambda * gamma' P gamma`` has Hessian ``2 lambda P``, which
    is the ``lambda * Sigma_T`` of ``compute_w_lambda`` with ``Sigma_T = P``.
    """
    if spec.kind is not PenaltyKind.L2:
        raise ValueError("only the L2 penalty has an equivalent fixed weight")
    fit_small = fit_small or fit_logistic(small)
    fit_big = fit_big or fit_logistic(big)
    P = penalty_matrix(small, spec)
    if P is None:
        P = np.eye(small.p)
    return compute_w_lambda(fit_small.info, fit_big.info, P, 2.0 * spec.lam)


def fit_penalized(small: Dataset, big: Dataset, spec: PenaltySpec, *, compute_se: bool = False,
                  se_replicates: int = 500, seed: int = 0, start=None) -> PenalizedFit:
    """Minimize the penalized joint objective at ``spec.lam``.

    Standard errors (``compute_se``): L2 uses the fixed-weight formula for
    its equivalent weight; L1 uses a pairs bootstrap of the small data with
    the big data held fixed.
    """
    problem = JointProblem.from_data(small, big, spec)
    theta, F, it = problem.fit(spec.lam, start)
    p = small.p
    se = None
    if compute_se:
        se = _penalized_se(problem, small, big, spec, theta, se_replicates, seed)
    return PenalizedFit(theta[:p].copy(), theta[p:].copy(), float(spec.lam), float(F), se, it)


def _penalized_se(problem, small, big, spec, theta, replicates, seed):
    if spec.kind is PenaltyKind.L2:
        fit_S, fit_B = fit_logistic(small), fit_logistic(big)
        W = equivalent_weight(small, big, spec, fit_S, fit_B)
        return weighted_se(W, fit_S.cov, fit_B.cov)
    p = small.p
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(replicates):
        rows = rng.integers(0, small.n, small.n)
        try:
            th, _, _ = problem.subset_small(rows).fit(spec.lam, theta)
        except (Separation, NotConverged):
            continue
        draws.append(th[:p])
    if len(draws) < 2:
        raise NotConverged("too few successful bootstrap refits for L1 standard errors")
    return np.std(np.asarray(draws), axis=0, ddof=1)


@dataclass(frozen=True)
class CVResult:
    best_lambda: float
    lambdas: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    folds: np.ndarray

    def curve(self) -> list[dict]:
        return [{"lambda": float(l), "cv_deviance": float(m), "cv_se": float(s)}
                for l, m, s in zip(self.lambdas, self.cv_mean, self.cv_se)]


def assign_folds(y, K: int, seed: int, max_reshuffles: int = 10) -> np.ndarray:
    """Random fold labels 0..K-1; every fold must contain both outcome classes."""
    n = y.shape[0]
    if K < 2:
        raise InvalidDimension("need at least 2 folds")
    if n < 2 * K:
        raise FoldTooSmall(f"{n} small-data rows cannot fill {K} folds of size >= 2")
    rng = np.random.default_rng(seed)
    base = np.arange(n) % K
    for _ in range(max_reshuffles + 1):
        folds = rng.permutation(base)
        if all(0 < y[folds == k].sum() < (folds == k).sum() for k in range(K)):
            return folds
    raise FoldTooSmall(f"could not find {K} folds that each contain both outcome classes")


def cross_validate_lambda(small: Dataset, big: Dataset, spec: PenaltySpec, K: int = 10, seed: int = 0,
                          n_lambda: int = 50) -> CVResult:
    """K-fold CV over lambda, folding the small data only.

    Every training set includes all of the big data.  The loss is the
    deviance of the held-out small rows at the fitted beta.
    """
    problem = JointProblem.from_data(small, big, spec)
    if spec.lambda_grid is not None:
        lambdas = np.asarray(spec.lambda_grid)
    else:
        lambdas = default_lambda_grid(problem, n_lambda)
    folds = assign_folds(small.y, K, seed)
    p = small.p
    dev = np.empty((K, lambdas.shape[0]))
    for k in range(K):
        train = folds != k
        held = ~train
        for j, (theta, _) in enumerate(problem.subset_small(train).path(lambdas)):
            dev[k, j] = deviance_at(theta[:p], small.X[held], small.y[held])
    mean = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / np.sqrt(K)
    best = float(lambdas[int(np.argmin(mean))])
    return CVResult(best, lambdas, mean, se, folds)
