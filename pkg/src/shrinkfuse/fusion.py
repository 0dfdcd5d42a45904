"""Run the whole estimator family on one (small, big) pair.

``run_all_estimators`` produces an ``EstimateReport`` with one column per
method: Small, Big, Pool, W2, Wh, JSP, L1, L2.  A method that fails (for
example because the small data are separated) is recorded with its reason
and the remaining methods still run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, FusionError
from .glm import Dataset, LogisticFit, Source, fit_logistic
from .penalized import PenaltyKind, PenaltySpec, PenaltyTarget, cross_validate_lambda, fit_penalized
from .weights import (
    FusionInput,
    WeightMatrix,
    apply_weight,
    compute_js,
    compute_w2,
    compute_wh,
    estimate_moments,
    weighted_se,
)

log = logging.getLogger(__name__)

METHODS = ("Small", "Big", "Pool", "W2", "Wh", "JSP", "L1", "L2")


@dataclass(frozen=True)
class FusionConfig:
    methods: tuple[str, ...] = METHODS
    moment_provider: str = "bootstrap"
    bootstrap_replicates: int = 200
    cv_folds: int = 10
    n_lambda: int = 50
    seed: int = 0
    compute_se: bool = True
    l1_se_replicates: int = 500
    l2_target: PenaltyTarget = PenaltyTarget.COEFFICIENTS
    # Replace the weight used for a weighted column (W2, Wh or JSP).
    weight_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        bad = set(self.weight_overrides) - {"W2", "Wh", "JSP"}
        if bad:
            raise ValueError(f"weight overrides only apply to W2, Wh and JSP, got {sorted(bad)}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))


@dataclass
class EstimateReport:
    names: tuple[str, ...]
    methods: tuple[str, ...]
    estimates: dict[str, np.ndarray]
    ses: dict[str, np.ndarray | None]
    failures: dict[str, str]
    metadata: dict

    @property
    def p(self) -> int:
        return len(self.names)

    def column(self, method: str) -> np.ndarray | None:
        return self.estimates.get(method)


def pooled_fit(small: Dataset, big: Dataset, opts=None) -> LogisticFit:
    """MLE on the row-stacked data, i.e. the joint model with gamma forced to 0."""
    if small.p != big.p:
        raise DimensionMismatch(f"small data has {small.p} columns, big data has {big.p}")
    stacked = Dataset(np.concatenate([small.y, big.y]), np.vstack([small.X, big.X]), Source.SMALL, small.names)
    return fit_logistic(stacked, opts)


def run_all_estimators(small: Dataset, big: Dataset, config: FusionConfig | None = None) -> EstimateReport:
    config = config or FusionConfig()
    if small.p != big.p:
        raise DimensionMismatch(f"small data has {small.p} columns, big data has {big.p}")
    if small.names != big.names:
        raise DimensionMismatch(f"column names differ: {small.names} vs {big.names}")
    wanted = set(config.methods)
    seeds = [int(s) for s in np.random.SeedSequence(config.seed).generate_state(4)]

    estimates: dict[str, np.ndarray] = {}
    ses: dict[str, np.ndarray | None] = {}
    failures: dict[str, str] = {}
    meta = {"n_S": small.n, "n_B": big.n, "p": small.p, "moment_provider": config.moment_provider,
            "wh_fallback": False}

    def attempt(method, fn):
        try:
            est, se = fn()
        except FusionError as exc:
            failures[method] = f"{type(exc).__name__}: {exc}"
            log.info("%s failed: %s", method, failures[method])
            return
        estimates[method] = est
        ses[method] = se if config.compute_se else None

    fits: dict[str, LogisticFit] = {}

    def base_fit(which):
        if which not in fits:
            fits[which] = fit_logistic(small if which == "Small" else big)
        f = fits[which]
        return f.beta_hat, f.se

    needs_base = wanted & {"W2", "Wh", "JSP"}
    for which in ("Small", "Big"):
        if which in wanted or needs_base:
            attempt(which, lambda w=which: base_fit(w))

    if "Pool" in wanted:
        def pool():
            f = pooled_fit(small, big)
            return f.beta_hat, f.se
        attempt("Pool", pool)

    if needs_base:
        base_failed = [w for w in ("Small", "Big") if w not in fits]
        if base_failed:
            reason = f"base fit failed for {', '.join(base_failed)}"
            for m in sorted(needs_base, key=METHODS.index):
                failures[m] = reason
        else:
            inp = FusionInput(fits["Small"], fits["Big"])

            def weighted(method, make_weight):
                def run():
                    W = config.weight_overrides.get(method) or make_weight()
                    return apply_weight(inp, W), weighted_se(W, inp.fit_small.cov, inp.fit_big.cov)
                attempt(method, run)

            if "W2" in wanted:
                weighted("W2", lambda: compute_w2(inp.gamma_hat, inp.fit_small.info, inp.fit_big.info))
            if "Wh" in wanted:
                def wh():
                    moments = estimate_moments(inp.fit_small, small, inp.fit_big, big, config.moment_provider,
                                               config.bootstrap_replicates, seeds[0])
                    W = compute_wh(inp.gamma_hat, inp.fit_small.info, inp.fit_big.info, moments, small.n, big.n)
                    meta["wh_fallback"] = W.fallback
                    return W
                weighted("Wh", wh)
            if "JSP" in wanted:
                weighted("JSP", lambda: compute_js(inp.fit_small.beta_hat, inp.fit_big.beta_hat,
                                                   inp.fit_small.cov, inp.fit_big.cov, small.p, small.n,
                                                   positive_part=True))
        # Small/Big were fitted only to feed the weights; drop unrequested columns.
        for which in ("Small", "Big"):
            if which not in wanted:
                estimates.pop(which, None)
                ses.pop(which, None)
                failures.pop(which, None)

    for method, kind, seed in (("L1", PenaltyKind.L1, seeds[1]), ("L2", PenaltyKind.L2, seeds[2])):
        if method not in wanted:
            continue
        target = config.l2_target if kind is PenaltyKind.L2 else PenaltyTarget.COEFFICIENTS

        def penalized(kind=kind, target=target, seed=seed, method=method):
            spec = PenaltySpec(kind, 0.0, target)
            cv = cross_validate_lambda(small, big, spec, config.cv_folds, seed, config.n_lambda)
            meta[f"lambda_{method}"] = cv.best_lambda
            fit = fit_penalized(small, big, spec.with_lambda(cv.best_lambda), compute_se=config.compute_se,
                                se_replicates=config.l1_se_replicates, seed=seeds[3])
            return fit.beta_hat, fit.se
        attempt(method, penalized)

    return EstimateReport(small.names, config.methods, estimates, ses, failures, meta)
