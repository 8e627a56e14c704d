"""Monte Carlo scenario catalog.

Each scenario takes a flat parameter dict (normally a config section, which
also holds the pass thresholds), a seed and a worker count, and returns a
report dict with per-replicate results, summary statistics and a pass flag.
Outer replicates get their own spawned seed, so results do not depend on
the number of workers.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np
from scipy import stats

from ._rng import as_seed_sequence, parallel_map
from .adaptive import AdaptiveConfig, DependentResampler, FittedLaws, adaptive_ci, draw_h_tilde
from .lse import estimate_lse
from .mle import estimate_mle
from .noise import NoiseSpec, break_index, coeffs_from_name, gen_family_panel, gen_panel

__all__ = ["SCENARIOS", "SCENARIO_DEFAULTS", "run_scenario", "scenario_names"]


def _outer(fn: Callable[[np.random.SeedSequence], dict], reps: int, seed, threads: int) -> list:
    return parallel_map(fn, as_seed_sequence(seed).spawn(int(reps)), threads)


def _normal_panel(p: dict, n: int, ss, shift=None):
    m = int(p["m"])
    s = math.sqrt(p["delta_norm_sq"] / m) if shift is None else shift
    noise = NoiseSpec("iid", sigma=float(p.get("sigma", 1.0)))
    return gen_panel((np.zeros(m), np.full(m, s)), p["tau"], noise, m, n, seed=ss)


# ---------------------------------------------------------------------------


def _rate(p: dict, seed, threads: int, mle: bool) -> dict:
    ns = [int(v) for v in p["ns"]]
    reps = int(p["replicates"])
    m = int(p["m"])
    dn = float(p["delta_norm_sq"])
    seeds = as_seed_sequence(seed).spawn(len(ns))
    per_n = {}
    for n, ss in zip(ns, seeds):
        b0 = break_index(n, p["tau"])

        def one(s, n=n, b0=b0):
            if mle:
                lam = float(p["rate"])
                shift = math.sqrt(dn / m)
                panel = gen_family_panel("poisson", lam, lam + shift, p["tau"], m, n, seed=s)
                b = estimate_mle(panel, "poisson", p["c_star"]).b_index
            else:
                b = estimate_lse(_normal_panel(p, n, s), p["c_star"]).b_index
            return b - b0

        err = np.asarray(_outer(one, reps, ss, threads))
        scaled = dn * np.abs(err)
        per_n[n] = {
            "offsets": err.tolist(),
            "quantile": float(np.quantile(scaled, p["quantile"])),
            "mean": float(scaled.mean()),
        }
    qs = [per_n[n]["quantile"] for n in ns]
    growth = max(qs) / qs[0] - 1.0 if qs[0] > 0 else (0.0 if max(qs) == 0 else math.inf)
    return {
        "per_n": {str(n): v for n, v in per_n.items()},
        "summary": {"ns": ns, "quantiles": qs, "growth": growth},
        "passed": bool(growth <= p["max_growth"]),
    }


def rate_lse(p, seed, threads):
    """Upper quantile of ``n |Delta|^2 |tau_hat - tau|`` across sample sizes (least squares, Normal)."""
    return _rate(p, seed, threads, mle=False)


def rate_mle(p, seed, threads):
    """Same rate check for the Poisson likelihood estimator."""
    return _rate(p, seed, threads, mle=True)


def regime_a_degeneracy(p, seed, threads):
    """Frequency of exact recovery under a strong common shift."""
    n, m = int(p["n"]), int(p["m"])
    b0 = break_index(n, p["tau"])

    def one(s):
        panel = _normal_panel(p, n, s, shift=float(p["shift"]))
        return (
            estimate_lse(panel, p["c_star"]).b_index - b0,
            estimate_mle(panel, p["family"], p["c_star"]).b_index - b0,
        )

    res = np.asarray(_outer(one, p["replicates"], seed, threads))
    exact = (res == 0).mean(axis=0)
    return {
        "offsets": {"lse": res[:, 0].tolist(), "mle": res[:, 1].tolist()},
        "summary": {"exact_lse": float(exact[0]), "exact_mle": float(exact[1])},
        "passed": bool(exact.min() >= p["min_exact"]),
    }


def variance_ordering(p, seed, threads):
    """Least squares versus Poisson likelihood under heteroskedastic rates."""
    n, m = int(p["n"]), int(p["m"])
    rates = np.resize(np.asarray(p["rates"], float), m)
    b0 = break_index(n, p["tau"])

    def one(s):
        panel = gen_family_panel("poisson", rates, rates + p["shift"], p["tau"], m, n, seed=s)
        return (
            estimate_lse(panel, p["c_star"]).b_index - b0,
            estimate_mle(panel, "poisson", p["c_star"]).b_index - b0,
        )

    res = np.asarray(_outer(one, p["replicates"], seed, threads), dtype=float)
    scale = m * p["shift"] ** 2
    v_lse, v_mle = (scale * res).var(axis=0, ddof=1)
    ratio = v_mle / v_lse if v_lse > 0 else (0.0 if v_mle == 0 else math.inf)
    return {
        "offsets": {"lse": res[:, 0].astype(int).tolist(), "mle": res[:, 1].astype(int).tolist()},
        "summary": {"var_lse": float(v_lse), "var_mle": float(v_mle), "ratio": float(ratio)},
        "passed": bool(ratio <= p["max_ratio"]),
    }


def _coverage(p, seed, threads, make_panel, method, family) -> dict:
    n = int(p["n"])
    b0 = break_index(n, p["tau"])

    def one(s):
        s_panel, s_ci = s.spawn(2)
        panel = make_panel(s_panel)
        cfg = AdaptiveConfig(
            replicates=int(p["inner"]),
            level=p["level"],
            method=method,
            seed=s_ci,
            c_star=p["c_star"],
        )
        r = adaptive_ci(panel, cfg, family)
        lo, hi = r.ci_index
        return lo <= b0 <= hi, hi - lo, lo == hi == r.b_index

    res = _outer(one, p["outer"], seed, threads)
    cover = float(np.mean([r[0] for r in res]))
    return {
        "replicates": [{"covered": bool(c), "width": int(w)} for c, w, _ in res],
        "coverage": cover,
        "mean_width": float(np.mean([r[1] for r in res])),
    }


def coverage_lse(p, seed, threads):
    """Adaptive interval coverage under a weak Normal shift, and collapse under a strong one."""
    s_weak, s_strong = as_seed_sequence(seed).spawn(2)
    n = int(p["n"])
    weak = _coverage(p, s_weak, threads, lambda s: _normal_panel(p, n, s), "lse", None)
    strong_p = dict(p, outer=p["strong_runs"])
    strong_shift = float(p["strong_shift"])

    def strong_panel(s):
        return _normal_panel(p, n, s, shift=strong_shift)

    degen = None
    if int(p["strong_runs"]) > 0:
        def one(s):
            s_panel, s_ci = s.spawn(2)
            cfg = AdaptiveConfig(int(p["inner"]), p["level"], "lse", seed=s_ci, c_star=p["c_star"])
            r = adaptive_ci(strong_panel(s_panel), cfg)
            return r.ci_index[0] == r.ci_index[1] == r.b_index

        res = _outer(one, strong_p["outer"], s_strong, threads)
        degen = float(np.mean(res))
    target = 1.0 - p["level"]
    ok = abs(weak["coverage"] - target) <= p["tolerance"]
    if degen is not None:
        ok = ok and degen >= p["min_degenerate"]
    return {
        "replicates": weak["replicates"],
        "summary": {
            "coverage": weak["coverage"],
            "nominal": target,
            "mean_width": weak["mean_width"],
            "degenerate_fraction_strong": degen,
        },
        "passed": bool(ok),
    }


def coverage_mle(p, seed, threads):
    """Adaptive interval coverage for the Poisson likelihood estimator."""
    m, n = int(p["m"]), int(p["n"])
    lam = float(p["rate"])
    shift = math.sqrt(p["delta_norm_sq"] * lam / m)

    def panel(s):
        return gen_family_panel("poisson", lam, lam + shift, p["tau"], m, n, seed=s)

    weak = _coverage(p, seed, threads, panel, "mle", "poisson")
    target = 1.0 - p["level"]
    return {
        "replicates": weak["replicates"],
        "summary": {"coverage": weak["coverage"], "nominal": target, "mean_width": weak["mean_width"]},
        "passed": bool(abs(weak["coverage"] - target) <= p["tolerance"]),
    }


def zip_equal_mean(p, seed, threads):
    """Zero-inflated Poisson break that leaves every series mean unchanged."""
    m, n = int(p["m"]), int(p["n"])
    b0 = break_index(n, p["tau"])
    pre, post = tuple(p["pre"]), tuple(p["post"])
    s_loc, s_cov = as_seed_sequence(seed).spawn(2)

    def panel(s):
        return gen_family_panel("zip", pre, post, p["tau"], m, n, seed=s)

    def one(s):
        x = panel(s)
        return (
            estimate_mle(x, "zip", p["c_star"]).b_index - b0,
            estimate_lse(x, p["c_star"]).b_index - b0,
        )

    res = np.asarray(_outer(one, p["replicates"], s_loc, threads))
    within = float(np.mean(np.abs(res[:, 0]) <= p["mle_tolerance"]))
    lse_med = float(np.median(np.abs(res[:, 1])))
    ok = within >= p["min_within"] and lse_med > p["lse_min_median"]
    summary = {"mle_within_fraction": within, "lse_median_abs_error": lse_med,
               "mle_median_abs_error": float(np.median(np.abs(res[:, 0])))}
    if int(p["coverage_outer"]) > 0:
        cp = dict(p, outer=p["coverage_outer"])
        cov = _coverage(cp, s_cov, threads, panel, "mle", "zip")
        summary["mle_coverage"] = cov["coverage"]
        ok = ok and abs(cov["coverage"] - (1 - p["level"])) <= p["coverage_tolerance"]
    return {
        "offsets": {"mle": res[:, 0].tolist(), "lse": res[:, 1].tolist()},
        "summary": summary,
        "passed": bool(ok),
    }


def dependent_gaussian_ci(p, seed, threads):
    """Dependent resampling against independent resampling with matched lag-0 variance."""
    m, n = int(p["m"]), int(p["n"])
    shift = math.sqrt(p["delta_norm_sq"] / m)
    draws = int(p["draws"])
    s_iid, s_ar = as_seed_sequence(seed).spawn(2)
    out: dict = {}
    for label, noise, ss in (
        ("iid", NoiseSpec("iid"), s_iid),
        ("dependent", NoiseSpec("linear_process", coeffs=coeffs_from_name(f"geometric:{p['ar_coef']}")), s_ar),
    ):
        s_panel, s_dep, s_ind = ss.spawn(3)
        panel = gen_panel((np.zeros(m), np.full(m, shift)), p["tau"], noise, m, n, seed=s_panel)
        est = estimate_lse(panel, p["c_star"])
        res = DependentResampler(panel, est, int(p["max_lag"]))
        h_dep = res.draw(np.random.default_rng(s_dep), draws)
        c0 = np.maximum(res.acov[:, 0], 1e-12)
        fit = FittedLaws("lse", est.b_index, n, res.mu_pre, res.mu_post, c0, c0)
        h_ind = draw_h_tilde(fit, est.bounds, np.random.default_rng(s_ind), draws)
        out[label] = {"h_dependent": h_dep.tolist(), "h_independent": h_ind.tolist(),
                      "var_dependent": float(h_dep.var(ddof=1)), "var_independent": float(h_ind.var(ddof=1))}
    ks = stats.ks_2samp(out["iid"]["h_dependent"], out["iid"]["h_independent"])
    f = out["dependent"]["var_dependent"] / out["dependent"]["var_independent"]
    f_p = float(stats.f.sf(f, draws - 1, draws - 1))
    alpha = p["alpha"]
    return {
        "draws": out,
        "summary": {"iid_ks_pvalue": float(ks.pvalue), "dependent_var_ratio": float(f), "dependent_f_pvalue": f_p},
        "passed": bool(ks.pvalue >= alpha and f_p < alpha),
    }


SCENARIOS: dict[str, Callable[[dict, object, int], dict]] = {
    "rate-lse": rate_lse,
    "rate-mle": rate_mle,
    "regime-a-degeneracy": regime_a_degeneracy,
    "variance-ordering": variance_ordering,
    "coverage-lse": coverage_lse,
    "coverage-mle": coverage_mle,
    "zip-equal-mean": zip_equal_mean,
    "dependent-gaussian-ci": dependent_gaussian_ci,
}

_COMMON = {"tau": 0.5, "c_star": 0.1}

SCENARIO_DEFAULTS: dict[str, dict] = {
    "rate-lse": dict(_COMMON, m=10, delta_norm_sq=1.0, sigma=1.0, ns=[200, 400, 800],
                     replicates=300, quantile=0.9, max_growth=0.25),
    "rate-mle": dict(_COMMON, m=10, delta_norm_sq=1.0, rate=1.0, ns=[200, 400, 800],
                     replicates=300, quantile=0.9, max_growth=0.25),
    "regime-a-degeneracy": dict(_COMMON, m=50, n=400, shift=1.0, sigma=1.0, family="normal",
                                replicates=300, min_exact=0.95),
    "variance-ordering": dict(_COMMON, m=20, n=400, rates=[1.0, 9.0], shift=0.25,
                              replicates=1000, max_ratio=1.05),
    "coverage-lse": dict(_COMMON, m=50, n=500, delta_norm_sq=1.0, sigma=1.0, level=0.1, inner=500,
                         outer=500, tolerance=0.05, strong_runs=100, strong_shift=1.0,
                         min_degenerate=0.95),
    "coverage-mle": dict(_COMMON, m=50, n=500, delta_norm_sq=1.0, rate=2.0, level=0.1, inner=500,
                         outer=200, tolerance=0.05),
    "zip-equal-mean": dict(_COMMON, m=50, n=400, pre=[0.5, 2.0], post=[2 / 3, 3.0], replicates=200,
                           mle_tolerance=10, min_within=0.8, lse_min_median=40.0, coverage_outer=0,
                           level=0.1, inner=200, coverage_tolerance=0.06),
    "dependent-gaussian-ci": dict(_COMMON, m=10, n=400, delta_norm_sq=1.0, ar_coef=0.6, max_lag=5,
                                  draws=1000, alpha=0.05),
}


def scenario_names() -> list[str]:
    return list(SCENARIOS)


def run_scenario(name: str, params: dict | None = None, seed=0, threads: int = 1) -> dict:
    """Run one catalog scenario; ``params`` override the catalog defaults."""
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    p = dict(SCENARIO_DEFAULTS[name])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    p.update(params or {})
    t0 = time.perf_counter()
    out = SCENARIOS[name](p, seed, threads)
    out["scenario"] = name
    out["params"] = p
    out["wall_clock_seconds"] = time.perf_counter() - t0
    return out
