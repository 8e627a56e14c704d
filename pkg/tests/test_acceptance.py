"""Acceptance suite: one PASS/FAIL line per criterion, printed into the pytest log.

Every criterion uses the same master seed, fixed before any result was seen.
"""

import math
import time

import numpy as np
import pytest
from scipy import special, stats

from commonbreak.experiments import run_scenario
from commonbreak.families import family_names, get_family
from commonbreak.limits import LimitLawSpec, quantile_table, sim_regime_b, sim_regime_c
from commonbreak.lse import estimate_lse, lse_criterion
from commonbreak.mle import estimate_mle, mle_criterion
from commonbreak.panel import PanelData, TrimWindow, build_prefix
from family_oracles import make_family, neg_expected_hessian, rand_param

SEED = 2026
THREADS = 4

pytestmark = pytest.mark.acceptance


@pytest.fixture
def announce(capsys):
    t0 = time.perf_counter()

    def emit(number, passed, detail):
        with capsys.disabled():
            status = "PASS" if passed else "FAIL"
            print(f"\n[criterion {number}] {status} {detail} ({time.perf_counter() - t0:.1f}s)")

    return emit


def _close(a, b, rel=1e-10):
    return abs(a - b) <= rel * max(abs(b), 1.0)


def _naive_lse(x, b):
    a, c = x[:, :b], x[:, b:]
    return -(((a - a.mean(1, keepdims=True)) ** 2).sum() + ((c - c.mean(1, keepdims=True)) ** 2).sum()) / x.shape[1]


def _naive_mle(x, b, family):
    total = 0.0
    for row in x:
        for seg in (row[:b], row[b:]):
            mu = seg.mean()
            if family == "normal":
                var = max(seg.var(), 1e-12)
                total += np.sum(-0.5 * math.log(2 * math.pi * var) - (seg - mu) ** 2 / (2 * var))
            elif family == "bernoulli":
                total += np.sum(special.xlogy(seg, mu) + special.xlogy(1 - seg, 1 - mu))
            else:
                total += np.sum(special.xlogy(seg, mu) - mu - special.gammaln(seg + 1))
    return total / x.shape[1]


def test_criterion_1_oracle_equivalence(announce):
    rng = np.random.default_rng(SEED)
    worst, checks = 0.0, 0
    for _ in range(50):
        m, n = int(rng.integers(1, 6)), int(rng.integers(10, 41))
        lo, hi = TrimWindow(0.1).bounds(n)
        panels = {
            "normal": rng.normal(rng.uniform(-2, 2), rng.uniform(0.5, 2), (m, n)),
            "bernoulli": (rng.random((m, n)) < rng.uniform(0.2, 0.8)).astype(float),
            "poisson": rng.poisson(rng.uniform(0.5, 5), (m, n)).astype(float),
        }
        pre = build_prefix(PanelData(panels["normal"]))
        for b in range(lo, hi + 1):
            ref = _naive_lse(panels["normal"], b)
            worst = max(worst, abs(lse_criterion(pre, b) - ref) / max(abs(ref), 1.0))
            checks += 1
            for fam, x in panels.items():
                ref = _naive_mle(x, b, fam)
                got = mle_criterion(PanelData(x), fam, b).value
                worst = max(worst, abs(got - ref) / max(abs(ref), 1.0))
                checks += 1
    passed = worst <= 1e-10
    announce(1, passed, f"{checks} criterion values, worst relative error {worst:.2e} (tolerance 1e-10)")
    assert passed


def test_criterion_2_gaussian_equivalence(announce):
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(200):
        m, n = int(rng.integers(1, 8)), int(rng.integers(10, 120))
        b0 = int(rng.integers(2, n - 1))
        shift = rng.normal(0, 1, m)
        x = rng.standard_normal((m, n)) + np.where(np.arange(n) < b0, 0.0, shift[:, None])
        panel = PanelData(x)
        mismatches += estimate_lse(panel).b_index != estimate_mle(panel, "normal-known-var").b_index
    announce(2, mismatches == 0, f"{mismatches} mismatches in 200 panels")
    assert mismatches == 0


def test_criterion_3_derivatives(announce):
    rng = np.random.default_rng(SEED)
    worst_fd, worst_info = 0.0, 0.0
    for name in family_names():
        fam = make_family(name)
        for _ in range(100):
            p = rand_param(name, rng)
            cov = rng.standard_normal(2) if fam.uses_covariates else None
            x = fam.sample(p, rng, cov=cov)
            g, H = fam.score(p, x, cov), fam.hessian(p, x, cov)
            for j in range(len(p)):
                e = np.zeros_like(p)
                e[j] = 1e-5 * max(1.0, abs(p[j]))
                fd_g = (fam.log_density(p + e, x, cov) - fam.log_density(p - e, x, cov)) / (2 * e[j])
                fd_H = (fam.score(p + e, x, cov) - fam.score(p - e, x, cov)) / (2 * e[j])
                worst_fd = max(worst_fd, abs(g[j] - fd_g) / max(abs(fd_g), 1.0))
                worst_fd = max(worst_fd, float(np.max(np.abs(H[:, j] - fd_H) / np.maximum(np.abs(fd_H), 1.0))))
            info = fam.fisher_info(p, None if cov is None else cov[None, :])
            ref = neg_expected_hessian(fam, p, cov)
            worst_info = max(worst_info, float(np.max(np.abs(info - ref) / np.maximum(np.abs(ref), 1.0))))
    passed = worst_fd <= 1e-5 and worst_info <= 1e-6
    announce(
        3, passed,
        f"{len(family_names())} families x 100 points: finite-difference error {worst_fd:.1e} (<= 1e-5), "
        f"information error {worst_info:.1e} (<= 1e-6)",
    )
    assert passed


def test_criterion_4_regime_a_degeneracy(announce):
    out = run_scenario("regime-a-degeneracy", seed=SEED, threads=THREADS)
    s = out["summary"]
    announce(4, out["passed"], f"exact recovery LSE {s['exact_lse']:.3f}, MLE {s['exact_mle']:.3f} (>= 0.95, 300 panels)")
    assert out["passed"]


def test_criterion_5_rate_boundedness(announce):
    lse = run_scenario("rate-lse", seed=SEED, threads=THREADS)
    mle = run_scenario("rate-mle", seed=SEED, threads=THREADS)
    passed = lse["passed"] and mle["passed"]
    fmt = lambda o: "/".join(f"{q:.2f}" for q in o["summary"]["quantiles"]) + f" growth {o['summary']['growth']:+.3f}"
    announce(5, passed, f"90th pct over n=200/400/800: LSE {fmt(lse)}; MLE {fmt(mle)} (growth <= 0.25)")
    assert passed


def test_criterion_6_limit_scaling(announce):
    seeds = np.random.SeedSequence(SEED).spawn(5)
    gamma2 = sim_regime_b(LimitLawSpec("b", 2.0, 2.0), rng=seeds[0], size=10_000)
    gamma1 = sim_regime_b(LimitLawSpec("b", 1.0, 1.0), rng=seeds[1], size=10_000)
    p_b = stats.ks_2samp(gamma2, 4 * gamma1).pvalue
    c_a = sim_regime_c(LimitLawSpec("c", c1_sq=4.0, gamma_L_star=2.0, gamma_R_star=2.0), rng=seeds[2], size=10_000)
    c_b = sim_regime_c(LimitLawSpec("c", c1_sq=1.0, gamma_L_star=0.5, gamma_R_star=0.5), rng=seeds[3], size=10_000)
    p_c = stats.ks_2samp(c_a, c_b).pvalue
    levels = (0.025, 0.05, 0.1, 0.9, 0.95, 0.975)
    coarse, fine = quantile_table(
        LimitLawSpec("b", 1.0, 1.0), levels, 100_000, seeds[4], step=0.01, threads=THREADS, refine=True
    )
    drift = max(abs(fine.quantiles[a] - coarse.quantiles[a]) / abs(fine.quantiles[a]) for a in levels)
    passed = p_b > 0.01 and p_c > 0.01 and drift < 0.02
    announce(6, passed, f"KS p gamma-scaling {p_b:.3f}, walk rescaling {p_c:.3f} (> 0.01); refinement drift {drift:.4f} (< 0.02)")
    assert passed


def test_criterion_7_variance_ordering(announce):
    out = run_scenario("variance-ordering", seed=SEED, threads=THREADS)
    s = out["summary"]
    announce(7, out["passed"], f"Var MLE {s['var_mle']:.2f} vs Var LSE {s['var_lse']:.2f}, ratio {s['ratio']:.3f} (<= 1.05)")
    assert out["passed"]


def test_criterion_8_adaptive_coverage(announce):
    out = run_scenario("coverage-lse", seed=SEED, threads=THREADS)
    s = out["summary"]
    announce(
        8, out["passed"],
        f"m=50 n=500 |delta|^2=1: coverage {s['coverage']:.3f} (0.90 +/- 0.05, 500 panels), "
        f"strong-signal degenerate fraction {s['degenerate_fraction_strong']:.2f} (>= 0.95)",
    )
    assert out["passed"]


def test_criterion_8_supplement_large_n(announce):
    out = run_scenario("coverage-lse", {"n": 5000, "strong_runs": 0}, seed=SEED, threads=THREADS)
    s = out["summary"]
    announce("8-supplement", out["passed"], f"m=50 n=5000 |delta|^2=1: coverage {s['coverage']:.3f} (0.90 +/- 0.05, 500 panels)")
    assert out["passed"]


def test_criterion_9_zip_separation(announce):
    out = run_scenario("zip-equal-mean", seed=SEED, threads=THREADS)
    s = out["summary"]
    announce(
        9, out["passed"],
        f"MLE within +/-10 in {s['mle_within_fraction']:.3f} (>= 0.80); LSE median |error| {s['lse_median_abs_error']:.1f} (> 40)",
    )
    assert out["passed"]


def test_criterion_10_dependent_variant(announce):
    out = run_scenario("dependent-gaussian-ci", seed=SEED, threads=THREADS)
    s = out["summary"]
    announce(
        10, out["passed"],
        f"iid KS p {s['iid_ks_pvalue']:.3f} (>= 0.05); dependent variance ratio {s['dependent_var_ratio']:.2f}, "
        f"one-sided F p {s['dependent_f_pvalue']:.1e} (< 0.05)",
    )
    assert out["passed"]
