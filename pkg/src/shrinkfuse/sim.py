"""Monte Carlo comparison of the estimators over a scenario grid.

Each scenario cell fixes ``(p, ||gamma||/||beta||, n_S, n_B, mechanism)``.
A replication draws Gaussian covariates for both sources, draws outcomes
from the shared-structure logistic model, runs every requested estimator
and records ``||beta_hat - beta||^2``.  Random streams are derived from
``(master_seed, scenario id, replication, redraw)`` only, so results do not
depend on execution order or worker count.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import InvalidConfig, MissingBaseline
from .fusion import METHODS, FusionConfig, run_all_estimators
from .glm import Dataset, Source

log = logging.getLogger(__name__)

DEFAULT_MISSING_COEF = math.log(2.0)


class BiasMechanism(enum.Enum):
    SCALED_GAMMA = "ScaledGamma"
    ZERO_GAMMA = "ZeroGamma"
    MISSING_COVARIATE = "MissingCovariate"


@dataclass(frozen=True)
class ScenarioConfig:
    p: int
    gamma_ratio: float
    n_S: int
    n_B: int
    bias_mechanism: BiasMechanism = BiasMechanism.SCALED_GAMMA
    replications: int = 100
    master_seed: int = 0
    beta_norm: float | None = None
    missing_coef: float = DEFAULT_MISSING_COEF
    moment_provider: str = "bootstrap"
    cv_folds: int = 10
    n_lambda: int = 50
    max_redraws: int = 5

    def __post_init__(self):
        mech = self.bias_mechanism
        if not isinstance(mech, BiasMechanism):
            try:
                mech = BiasMechanism(mech)
            except ValueError:
                raise InvalidConfig(f"unknown bias mechanism {mech!r}")
            object.__setattr__(self, "bias_mechanism", mech)
        if mech is not BiasMechanism.SCALED_GAMMA:
            object.__setattr__(self, "gamma_ratio", 0.0)
        if self.beta_norm is None:
            object.__setattr__(self, "beta_norm", self.p * math.log(1.1))
        if self.p < 2:
            raise InvalidConfig("p must be at least 2 (intercept plus one covariate)")
        if self.replications < 2:
            raise InvalidConfig("need at least 2 replications")
        if self.gamma_ratio < 0 or self.beta_norm < 0 or not math.isfinite(self.missing_coef):
            raise InvalidConfig("norms and ratios must be nonnegative")
        if self.n_S < self.p + 1 or self.n_B < self.p + 2:
            raise InvalidConfig(f"sample sizes too small for p={self.p}")
        if self.max_redraws < 0:
            raise InvalidConfig("max_redraws must be nonnegative")

    def key(self) -> tuple:
        return (self.p, float(self.gamma_ratio), self.n_S, self.n_B, self.bias_mechanism.value)

    @property
    def scenario_id(self) -> int:
        """Stable 63-bit id from the fields that change the data-generating law."""
        text = repr(self.key() + (float(self.beta_norm), float(self.missing_coef)))
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def true_coefficients(config: ScenarioConfig):
    """Equal-entry beta with norm ``beta_norm`` and the cell's gamma.

    gamma points along the alternating-sign unit vector.  For the
    missing-covariate mechanism gamma is induced by the omitted covariate
    and has no closed form, so it is returned as NaN.
    """
    p = config.p
    beta = np.full(p, config.beta_norm / math.sqrt(p))
    if config.bias_mechanism is BiasMechanism.SCALED_GAMMA:
        direction = np.array([1.0 if j % 2 == 0 else -1.0 for j in range(p)]) / math.sqrt(p)
        gamma = config.gamma_ratio * np.linalg.norm(beta) * direction
    elif config.bias_mechanism is BiasMechanism.ZERO_GAMMA:
        gamma = np.zeros(p)
    else:
        gamma = np.full(p, np.nan)
    return beta, gamma


def _streams(config: ScenarioConfig, replication: int, redraw: int):
    ss = np.random.SeedSequence([config.master_seed, config.scenario_id, replication, redraw])
    data_ss, est_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(est_ss.generate_state(1)[0])


def _design(rng, n, p):
    return np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])


def generate_scenario_data(config: ScenarioConfig, replication: int, redraw: int = 0):
    rng, _ = _streams(config, replication, redraw)
    return _generate(config, rng)


def _generate(config, rng):
    p = config.p
    beta, gamma = true_coefficients(config)
    names = ("(Intercept)",) + tuple(f"x{j}" for j in range(1, p))
    X_S = _design(rng, config.n_S, p)
    y_S = (rng.random(config.n_S) < expit(X_S @ beta)).astype(float)
    if config.bias_mechanism is BiasMechanism.MISSING_COVARIATE:
        # The omitted covariate sits at column 6 (or last when p < 7) of a
        # (p + 1)-column generator design and is removed before fitting.
        full = _design(rng, config.n_B, p + 1)
        drop = min(6, p)
        coef = np.insert(beta, drop, config.missing_coef)
        y_B = (rng.random(config.n_B) < expit(full @ coef)).astype(float)
        X_B = np.delete(full, drop, axis=1)
    else:
        X_B = _design(rng, config.n_B, p)
        y_B = (rng.random(config.n_B) < expit(X_B @ (beta + gamma))).astype(float)
    small = Dataset(y_S, X_S, Source.SMALL, names)
    big = Dataset(y_B, X_B, Source.BIG, names)
    return small, big, beta, gamma


@dataclass
class SimulationResult:
    config: ScenarioConfig
    methods: tuple[str, ...]
    records: np.ndarray  # replications x methods, squared estimation errors
    redraws: int = 0
    failed_replications: list[int] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.failed_replications)

    @property
    def mse(self) -> dict[str, float]:
        return {m: float(np.mean(self.records[:, j])) for j, m in enumerate(self.methods)}

    @property
    def mse_mc_se(self) -> dict[str, float]:
        r = self.records.shape[0]
        return {m: float(np.std(self.records[:, j], ddof=1) / math.sqrt(r)) for j, m in enumerate(self.methods)}

    @property
    def log_ratio_vs_small(self) -> dict[str, float]:
        if "Small" not in self.methods:
            return {}
        mse = self.mse
        return {m: math.log(mse[m] / mse["Small"]) for m in self.methods}

    def paired_se(self, a: str, b: str) -> float:
        """Monte Carlo standard error of ``MSE_a - MSE_b`` from paired replications."""
        diff = self.records[:, self.methods.index(a)] - self.records[:, self.methods.index(b)]
        return float(np.std(diff, ddof=1) / math.sqrt(diff.shape[0]))


def _run_replication(config: ScenarioConfig, methods: tuple[str, ...], replication: int):
    """Squared errors for one replication, redrawing on estimator failure."""
    for redraw in range(config.max_redraws + 1):
        rng, est_seed = _streams(config, replication, redraw)
        small, big, beta, _ = _generate(config, rng)
        fcfg = FusionConfig(methods=methods, moment_provider=config.moment_provider, cv_folds=config.cv_folds,
                            n_lambda=config.n_lambda, seed=est_seed, compute_se=False)
        report = run_all_estimators(small, big, fcfg)
        if not report.failures:
            errs = [float(np.sum((report.estimates[m] - beta) ** 2)) for m in methods]
            return errs, redraw
        log.debug("replication %d redraw %d failed: %s", replication, redraw, report.failures)
    return None, config.max_redraws + 1


def _run_task(args):
    config, methods, replication = args
    return _run_replication(config, methods, replication)


def _ordered_methods(methods) -> tuple[str, ...]:
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InvalidConfig(f"unknown methods {sorted(unknown)}")
    return tuple(m for m in METHODS if m in methods)


def run_grid(configs, methods=("Small", "Pool", "W2", "Wh", "L1", "L2", "JSP"), threads: int = 1):
    """Run every replication of every cell; returns one ``SimulationResult`` per cell.

    Failed replications are redrawn from a derived seed up to
    ``max_redraws`` times; a replication that still fails is left out and
    the cell is flagged.
    """
    methods = _ordered_methods(methods)
    configs = list(configs)
    for c in configs:
        if "JSP" in methods and c.p < 3:
            raise InvalidConfig("JSP needs p >= 3")
    tasks = [(c, methods, r) for c in configs for r in range(c.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        outputs = [_run_task(t) for t in tasks]

    results = []
    pos = 0
    for c in configs:
        rows, redraws, failed = [], 0, []
        for r in range(c.replications):
            errs, used = outputs[pos]
            pos += 1
            redraws += used
            if errs is None:
                failed.append(r)
            else:
                rows.append(errs)
        if len(rows) < 2:
            raise InvalidConfig(f"cell {c.key()} produced fewer than 2 usable replications")
        results.append(SimulationResult(c, methods, np.asarray(rows), redraws, failed))
    return results


LOG_RATIO_FIELDS = ("p", "gamma_ratio", "n_S", "n_B", "bias_mechanism", "method", "mse", "mse_mc_se", "log_ratio")


def aggregate_log_ratios(results) -> list[dict]:
    """One row per (cell, method) with ``log(MSE_method / MSE_Small)``."""
    results = list(results)
    if not results:
        raise MissingBaseline("no simulation results to aggregate")
    rows = []
    for res in results:
        if "Small" not in res.methods:
            raise MissingBaseline(f"cell {res.config.key()} has no Small baseline")
        mse, se, lr = res.mse, res.mse_mc_se, res.log_ratio_vs_small
        p, ratio, n_S, n_B, mech = res.config.key()
        for m in res.methods:
            rows.append({"p": p, "gamma_ratio": ratio, "n_S": n_S, "n_B": n_B, "bias_mechanism": mech,
                         "method": m, "mse": mse[m], "mse_mc_se": se[m], "log_ratio": lr[m]})
    return rows


def with_seed(configs, master_seed: int):
    return [replace(c, master_seed=master_seed) for c in configs]
