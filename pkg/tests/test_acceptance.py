"""Acceptance criteria, one test and one printed PASS/FAIL line each.

Simulation criteria share module-scoped runs with a fixed master seed.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from conftest import make_logistic
from shrinkfuse.glm import Dataset, Source, fit_logistic
from shrinkfuse.penalized import (
    JointProblem,
    PenaltyKind,
    PenaltySpec,
    PenaltyTarget,
    default_lambda_grid,
    equivalent_weight,
    fit_penalized,
)
from shrinkfuse.sim import BiasMechanism, ScenarioConfig, run_grid
from shrinkfuse.weights import (
    ExpansionMoments,
    FusionInput,
    apply_weight,
    compute_w2,
    compute_w_lambda,
    compute_wh,
    estimate_moments_bootstrap,
    js_constant,
)
from test_glm import reference_fit
from test_penalized import make_pair, reference_objective
from test_weights import exact_intercept_bias, intercept_data, random_spd

SEED = 2024
GRID_METHODS = ("Small", "Pool", "W2", "Wh")


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def dominance_grid():
    cfgs = [ScenarioConfig(p, r, n_S, 1000, replications=100, master_seed=SEED)
            for p in (3, 11) for r in (0.5, 2.0) for n_S in (100, 500)]
    return {res.config.key()[:3]: res for res in run_grid(cfgs, GRID_METHODS)}


def test_criterion_1_dominance(dominance_grid, capsys):
    worst = []
    for key, res in sorted(dominance_grid.items()):
        lr = res.log_ratio_vs_small
        worst.append((max(lr["W2"], lr["Wh"]), key, lr["W2"], lr["Wh"]))
    top = max(worst)
    ok = all(w[0] <= 0.02 for w in worst)
    cells = "; ".join(f"{k}: W2 {a:+.3f} Wh {b:+.3f}" for _, k, a, b in worst)
    verdict(capsys, 1, ok, f"max log ratio {top[0]:+.4f} at {top[1]} (limit 0.02); {cells}")


def test_criterion_2_overlay(dominance_grid, capsys):
    gaps = []
    for key, res in sorted(dominance_grid.items()):
        gaps.append((abs(math.log(res.mse["W2"]) - math.log(res.mse["Wh"])), key))
    ok = all(g < 0.1 for g, _ in gaps)
    over = [f"{k} {g:.3f}" for g, k in gaps if g >= 0.1]
    verdict(capsys, 2, ok, f"max |log MSE_W2 - log MSE_Wh| = {max(gaps)[0]:.4f} at {max(gaps)[1]} (limit 0.1)"
            + (f"; over limit: {', '.join(over)}" if over else ""))


def test_criterion_3_pool_sensitivity(dominance_grid, capsys):
    lr = dominance_grid[(11, 2.0, 500)].log_ratio_vs_small["Pool"]
    verdict(capsys, 3, lr > 0, f"log(MSE_Pool/MSE_Small) = {lr:+.4f} at (11, 2, 500) (must be > 0)")


def test_criterion_4_ordering(capsys):
    cfg = ScenarioConfig(11, 2.0, 100, 1000, replications=100, master_seed=SEED)
    res = run_grid([cfg], ("Small", "Pool", "W2", "JSP", "L1", "L2"))[0]
    others = {m: res.mse[m] for m in ("L1", "L2", "JSP", "Pool")}
    best = min(others, key=others.get)
    se = res.paired_se("W2", best)
    ok = res.mse["W2"] <= others[best] + 2 * se
    mses = ", ".join(f"{m} {v:.4f}" for m, v in res.mse.items())
    verdict(capsys, 4, ok, f"MSE_W2 {res.mse['W2']:.4f} vs best other {best} {others[best]:.4f} + 2 x {se:.4f}; {mses}")


def test_criterion_5_zero_gamma(capsys):
    cfg = ScenarioConfig(6, 0.0, 100, 1000, BiasMechanism.ZERO_GAMMA, replications=100, master_seed=SEED)
    res = run_grid([cfg], ("Small", "Pool", "W2", "L1", "L2"))[0]
    lr = res.log_ratio_vs_small
    rivals = ("W2", "L1", "L2")
    negative = all(lr[m] < 0 for m in ("Pool", *rivals))
    pool_min = all(res.mse["Pool"] <= res.mse[m] + 2 * res.paired_se("Pool", m) for m in rivals)
    ratios = ", ".join(f"{m} {lr[m]:+.3f}" for m in ("Pool", *rivals))
    verdict(capsys, 5, negative and pool_min, f"log ratios {ratios}; all negative: {negative}; Pool minimal: {pool_min}")


def test_criterion_6_oracle_equivalence(capsys):
    rng = np.random.default_rng(SEED)
    glm_gaps = []
    while len(glm_gaps) < 50:
        p = int(rng.integers(2, 6))
        data = make_logistic(rng, int(rng.integers(40, 120)), rng.normal(0, 0.6, p))
        try:
            fit = fit_logistic(data)
        except Exception:
            continue
        glm_gaps.append(abs(fit.loglik - reference_fit(data.X, data.y)[1]))
    pen_gaps = []
    for i in range(20):
        kind = PenaltyKind.L1 if i % 2 == 0 else PenaltyKind.L2
        small, big = make_pair(SEED + i, p=int(2 + i % 4))
        lam = float(default_lambda_grid(JointProblem.from_data(small, big, PenaltySpec(kind)), 10)[3 + i % 5])
        fit = fit_penalized(small, big, PenaltySpec(kind, lam))
        pen_gaps.append(abs(fit.objective_value - reference_objective(small, big, kind, lam)))
    ok = max(glm_gaps) < 1e-8 and max(pen_gaps) < 1e-6
    verdict(capsys, 6, ok, f"IRLS max log-likelihood gap {max(glm_gaps):.2e} over 50 (limit 1e-8); "
                           f"penalized max objective gap {max(pen_gaps):.2e} over 20 (limit 1e-6)")


def test_criterion_7_closed_forms(capsys):
    rng = np.random.default_rng(SEED)
    checks = {}
    checks["W2 = 0.5 I"] = np.max(np.abs(compute_w2(np.zeros(3), np.eye(3), np.eye(3)).W - 0.5 * np.eye(3)))
    checks["scalar W2 = 0.6"] = abs(compute_w2(np.ones(1), np.eye(1), 2 * np.eye(1)).W[0, 0] - 0.6)
    S, B = random_spd(rng, 4), random_spd(rng, 4)
    checks["W_lambda(0) = I"] = np.max(np.abs(compute_w_lambda(S, B, np.eye(4), 0.0).W - np.eye(4)))
    checks["JS c = 0.588"] = abs(js_constant(5, 100) - 0.588)
    g = rng.standard_normal(4)
    checks["zero-moment Wh = W2"] = np.max(np.abs(compute_wh(g, S, B, ExpansionMoments.zeros(4), 100, 1000).W
                                                 - compute_w2(g, S, B).W))
    ok = all(v <= 1e-10 for v in checks.values())
    verdict(capsys, 7, ok, "; ".join(f"{k}: {v:.1e}" for k, v in checks.items()) + " (limit 1e-10)")


def test_criterion_8_l2_equivalence(capsys):
    # gamma = 0, Sigma_T = X_S^T X_S (small-linear-predictor penalty), n_B = 4 n, mean over 20 fixed seeds
    beta = np.array([0.2, 0.4, -0.3, 0.1])
    spec = PenaltySpec(PenaltyKind.L2, 1.0, PenaltyTarget.SMALL_LINEAR_PREDICTOR)
    means = []
    for n in (500, 2000, 8000):
        gaps = []
        for seed in range(20):
            rng = np.random.default_rng([SEED, seed, n])
            XS = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
            XB = np.column_stack([np.ones(4 * n), rng.standard_normal((4 * n, 3))])
            small = Dataset((rng.random(n) < expit(XS @ beta)).astype(float), XS)
            big = Dataset((rng.random(4 * n) < expit(XB @ beta)).astype(float), XB, Source.BIG)
            fS, fB = fit_logistic(small), fit_logistic(big)
            W = equivalent_weight(small, big, spec, fS, fB)
            fit = fit_penalized(small, big, spec)
            gaps.append(np.linalg.norm(fit.beta_hat - apply_weight(FusionInput(fS, fB), W)))
        means.append(float(np.mean(gaps)))
    ok = means[0] > means[1] > means[2]
    verdict(capsys, 8, ok, "mean ||beta_L2 - beta_W_lambda|| at n = 500, 2000, 8000: "
                           + ", ".join(f"{m:.2e}" for m in means) + " (must strictly decrease)")


def test_criterion_9_determinism(tmp_path, capsys):
    from shrinkfuse.cli import main

    plan = tmp_path / "plan.toml"
    plan.write_text('[simulation]\nmaster_seed = 9\nreplications = 5\n'
                    'methods = ["Small", "Pool", "W2", "Wh", "JSP", "L1", "L2"]\n'
                    "[[grid]]\np = [3]\ngamma_ratio = [0.5, 2.0]\nn_S = [100]\nn_B = [500]\n")
    dirs = []
    for threads in (1, 2, 1):
        out = tmp_path / f"out{len(dirs)}"
        assert main(["simulate", "--config", str(plan), "--out-dir", str(out), "--threads", str(threads)]) == 0
        dirs.append(out)
    names = sorted(f.name for f in dirs[0].iterdir())
    same = all(sorted(f.name for f in d.iterdir()) == names and
               all((d / n).read_bytes() == (dirs[0] / n).read_bytes() for n in names) for d in dirs[1:])
    verdict(capsys, 9, same, f"3 runs (threads 1, 2, 1) of simulate; files {names} byte-identical: {same}")


def test_criterion_10_bootstrap_bias(capsys):
    n, k = 200, 60
    data = intercept_data(n, k)
    fit = fit_logistic(data)
    m = estimate_moments_bootstrap(fit, data, replicates=500, seed=SEED)
    oracle = n * exact_intercept_bias(n, k / n)
    mc_se = math.sqrt(m.v[0, 0] / m.replicates)
    z = abs(m.c[0] - oracle) / mc_se
    verdict(capsys, 10, z < 3, f"c = {m.c[0]:.4f}, exact binomial oracle {oracle:.4f}, MC SE {mc_se:.4f}, "
                               f"|z| = {z:.2f} (limit 3)")
