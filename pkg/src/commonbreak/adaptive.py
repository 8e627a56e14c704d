"""Resampling confidence intervals for the common break.

Synthetic panels are drawn from the segment laws fitted at the estimated
break ``b_hat``. The criterion is then re-maximized with the plug-in
parameters held fixed. The offsets ``h = b' - b_hat`` of the re-maximized
breaks approximate the law of ``n (tau_hat - tau)`` in every signal regime.

For both criteria only the per-time increments matter:

    C(b') = sum_{t < b'} g_t,   g_t = sum_k [log p_pre(X_kt) - log p_post(X_kt)]

where least squares uses the unit-variance Gaussian version, i.e.
``g_t = -1/2 sum_k [(X_kt - mu1_k)^2 - (X_kt - mu2_k)^2]``. The factor 1/2
and the ``1/n`` normalization do not move the argmax.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from ._rng import as_seed_sequence, parallel_map
from .errors import CovNotPSD, DataError
from .families import ModelFamily, Normal, NormalKnownVariance, get_family
from .lse import BreakEstimate, autocov_estimates, estimate_lse
from .mle import estimate_mle
from .panel import PanelData, TrimWindow, build_prefix, segment_stats, validate_panel

__all__ = [
    "AdaptiveConfig",
    "AdaptiveResult",
    "FittedLaws",
    "DependentResampler",
    "refit_params",
    "draw_h_tilde",
    "draw_h_tilde_dependent",
    "adaptive_ci",
    "snr3_statistic",
]

VAR_FLOOR = 1e-12
METHODS = ("lse", "mle", "lse-dependent")


@dataclass(frozen=True)
class AdaptiveConfig:
    """Resampling settings. ``level`` is the miscoverage ``alpha``."""

    replicates: int = 500
    level: float = 0.1
    method: str = "lse"
    max_lag: int = 0
    seed: int | None = None
    c_star: float = 0.1
    threads: int = 1
    fast: bool = True

    def __post_init__(self) -> None:
        if self.replicates < 100:
            raise ValueError("replicates must be at least 100")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.max_lag < 0:
            raise ValueError("max_lag must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class FittedLaws:
    """Per-series segment laws used to generate synthetic panels.

    ``mu_*`` and ``var_*`` are the segment moments (the least-squares plug-in
    values). ``theta`` and ``eta`` are sampling parameters for ``family``;
    when ``family`` is None the sampler is Gaussian with the segment moments.
    """

    method: str
    b_index: int
    n: int
    mu_pre: np.ndarray
    mu_post: np.ndarray
    var_pre: np.ndarray
    var_post: np.ndarray
    family: ModelFamily | None = None
    theta: np.ndarray | None = None
    eta: np.ndarray | None = None
    covariates: np.ndarray | None = field(default=None, repr=False)
    degenerate: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.mu_pre)

    @property
    def gaussian_surrogate(self) -> bool:
        return self.family is None

    @property
    def gaussian(self) -> bool:
        return self.family is None or isinstance(self.family, (Normal, NormalKnownVariance))


def refit_params(panel: PanelData, est: BreakEstimate, family: ModelFamily | str | None = None) -> FittedLaws:
    """Segment laws at the estimated break.

    Least-squares estimates give segment means and variances; with a family
    the sampling parameters come from its moment link, or from segment
    maximum likelihood when the family is not identified by two moments.
    Likelihood estimates reuse the fitted segment parameters.
    """
    b = est.b_index
    st = segment_stats(build_prefix(panel), b)
    v1 = np.maximum(st.s1sq, VAR_FLOOR)
    v2 = np.maximum(st.s2sq, VAR_FLOOR)
    fam = None if family is None else get_family(family)
    theta = eta = deg = None
    cov = panel.covariates
    if fam is not None and fam.uses_covariates and cov is None:
        raise DataError(f"family {fam.name} needs covariates")
    if est.method == "mle":
        if fam is None:
            fam = get_family(est.family)
        theta = np.asarray(est.segment_params.theta, float)
        eta = np.asarray(est.segment_params.eta, float)
        deg = est.flags
    elif fam is not None:
        theta = fam.from_moments(st.mu1, v1)
        eta = fam.from_moments(st.mu2, v2)
        if theta is None or eta is None:
            x = panel.values
            f1 = fam.segment_mle(x[:, :b], None if cov is None else cov[:, :b])
            f2 = fam.segment_mle(x[:, b:], None if cov is None else cov[:, b:])
            theta, eta = f1.param, f2.param
            deg = f1.degenerate | f2.degenerate
    return FittedLaws(
        method=est.method,
        b_index=b,
        n=panel.n,
        mu_pre=np.asarray(st.mu1, float),
        mu_post=np.asarray(st.mu2, float),
        var_pre=v1,
        var_post=v2,
        family=fam,
        theta=theta,
        eta=eta,
        covariates=cov,
        degenerate=deg,
    )


# ---------------------------------------------------------------------------
# Argmax over the window


def _offset_argmax(C: np.ndarray, lo: int, b_hat: int) -> np.ndarray:
    """Offsets ``h`` maximizing ``C[:, j]`` (break ``lo + j``); ties to smallest ``|h|``, then negative."""
    h = lo + np.arange(C.shape[1]) - b_hat
    key = 2 * np.abs(h) - (h < 0)
    best = C.max(axis=1, keepdims=True)
    keyed = np.where(C == best, key[None, :], np.iinfo(np.int64).max)
    return h[np.argmin(keyed, axis=1)]


def _window_walk(g: np.ndarray, lo: int, b_hat: int) -> np.ndarray:
    """Criterion over breaks ``lo..hi`` from increments ``g_t`` for ``t`` in ``lo..hi-1``.

    Values are relative to ``C(lo)``; the constant does not affect the argmax.
    """
    C = np.zeros((g.shape[0], g.shape[1] + 1))
    np.cumsum(g, axis=1, out=C[:, 1:])
    return _offset_argmax(C, lo, b_hat)


# ---------------------------------------------------------------------------
# Independent resampling


def _synthetic_panel(fit: FittedLaws, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
    n, b = fit.n, fit.b_index
    pre = np.arange(n) < b
    if fit.family is None:
        mean = np.where(pre, fit.mu_pre[:, None], fit.mu_post[:, None])
        sd = np.sqrt(np.where(pre, fit.var_pre[:, None], fit.var_post[:, None]))
        return mean + sd * rng.standard_normal((fit.m, n)), None
    fam = fit.family
    cov = None
    if fam.uses_covariates:
        rows = rng.integers(0, n, size=(fit.m, n))
        cov = np.take_along_axis(fit.covariates, rows[:, :, None], axis=1)
    par = np.where(pre[None, :, None], fit.theta[:, None, :], fit.eta[:, None, :])
    return fam.sample(par, rng, cov=cov), cov


def _increments_full(fit: FittedLaws, x: np.ndarray, cov) -> np.ndarray:
    if fit.method == "mle":
        fam = fit.family
        lp = fam.log_density(fit.theta[:, None, :], x, cov)
        lq = fam.log_density(fit.eta[:, None, :], x, cov)
        return (lp - lq).sum(axis=0)
    d1 = x - fit.mu_pre[:, None]
    d2 = x - fit.mu_post[:, None]
    return -0.5 * (d1 * d1 - d2 * d2).sum(axis=0)


def _gaussian_lse_increments(fit: FittedLaws, lo: int, hi: int, rng: np.random.Generator, size: int):
    """Exact law of the least-squares increments under Gaussian segment laws.

    With ``d = mu_pre - mu_post`` each increment is Gaussian with mean
    ``+/- |d|^2 / 2`` (sign by side of ``b_hat``) and variance
    ``sum_k d_k^2 var_k`` on that side, independently over time.
    """
    d = fit.mu_pre - fit.mu_post
    dn = float(d @ d)
    t = np.arange(lo, hi)
    pre = t < fit.b_index
    mean = np.where(pre, 0.5 * dn, -0.5 * dn)
    sd = np.sqrt(np.where(pre, float(d * d @ fit.var_pre), float(d * d @ fit.var_post)))
    return mean + sd * rng.standard_normal((size, len(t)))


def draw_h_tilde(
    fit: FittedLaws,
    window: TrimWindow | float | tuple[int, int] = 0.1,
    rng=None,
    size: int | None = None,
    fast: bool = True,
) -> int | np.ndarray:
    """Offset(s) of the re-maximized break on synthetic panel(s).

    ``fast`` uses the exact increment law when the fitted laws are Gaussian and
    the criterion is least squares; otherwise full panels are generated.
    """
    lo, hi = _bounds(window, fit.n)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    count = 1 if size is None else int(size)
    if fast and fit.method == "lse" and fit.gaussian:
        g = _gaussian_lse_increments(fit, lo, hi, gen, count)
    else:
        g = np.empty((count, hi - lo))
        for r in range(count):
            x, cov = _synthetic_panel(fit, gen)
            g[r] = _increments_full(fit, x, cov)[lo:hi]
    h = _window_walk(g, lo, fit.b_index)
    return int(h[0]) if size is None else h


def _bounds(window, n: int) -> tuple[int, int]:
    if isinstance(window, tuple):
        return int(window[0]), int(window[1])
    if not isinstance(window, TrimWindow):
        window = TrimWindow(float(window))
    return window.bounds(n)


# ---------------------------------------------------------------------------
# Dependent Gaussian resampling


def _banded_cov(acov: np.ndarray, size: int) -> np.ndarray:
    col = np.zeros(size)
    k = min(len(acov), size)
    col[:k] = acov[:k]
    C = linalg.toeplitz(col)
    w, V = linalg.eigh(C)
    if not np.all(np.isfinite(w)) or w[-1] <= 0:
        raise CovNotPSD("banded autocovariance matrix has no positive eigenvalue")
    return (V * np.maximum(w, VAR_FLOOR)) @ V.T


class DependentResampler:
    """Gaussian resampling with banded autocovariances estimated before the break.

    The synthetic noise for series ``k`` is ``N(0, C_k)`` with ``C_k`` the
    Toeplitz matrix of the lag ``0..max_lag`` estimates, eigenvalues floored.
    Because the criterion increments depend on the noise only through
    ``sum_k d_k Y_kt``, the fast sampler draws that single Gaussian process
    with covariance ``sum_k d_k^2 C_k``.
    """

    def __init__(self, panel: PanelData, est: BreakEstimate, max_lag: int):
        self.acov = autocov_estimates(panel, est, max_lag)
        self.b_index = est.b_index
        self.n = panel.n
        self.bounds = est.bounds
        st = segment_stats(build_prefix(panel), est.b_index)
        self.mu_pre = np.asarray(st.mu1, float)
        self.mu_post = np.asarray(st.mu2, float)
        self._agg = None
        self._series = None

    @property
    def shift(self) -> np.ndarray:
        return self.mu_pre - self.mu_post

    def _aggregate_factor(self) -> np.ndarray:
        if self._agg is None:
            lo, hi = self.bounds
            d2 = self.shift**2
            S = sum(w * _banded_cov(a, hi - lo) for w, a in zip(d2, self.acov) if w > 0)
            if np.isscalar(S):
                S = np.zeros((hi - lo, hi - lo))
            w, V = linalg.eigh(S)
            self._agg = V * np.sqrt(np.maximum(w, 0.0))
        return self._agg

    def _series_factors(self) -> list[np.ndarray]:
        if self._series is None:
            self._series = []
            for a in self.acov:
                w, V = linalg.eigh(_banded_cov(a, self.n))
                self._series.append(V * np.sqrt(np.maximum(w, 0.0)))
        return self._series

    def draw(self, rng=None, size: int | None = None, fast: bool = True) -> int | np.ndarray:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        count = 1 if size is None else int(size)
        lo, hi = self.bounds
        d = self.shift
        dn = float(d @ d)
        pre = np.arange(lo, hi) < self.b_index
        mean = np.where(pre, 0.5 * dn, -0.5 * dn)
        if fast:
            F = self._aggregate_factor()
            noise = (F @ gen.standard_normal((F.shape[1], count))).T
            g = mean[None, :] - noise
        else:
            Fs = self._series_factors()
            g = np.empty((count, hi - lo))
            t_pre = np.arange(self.n) < self.b_index
            for r in range(count):
                y = np.stack([F @ gen.standard_normal(F.shape[1]) for F in Fs])
                x = np.where(t_pre, self.mu_pre[:, None], self.mu_post[:, None]) + y
                d1 = x - self.mu_pre[:, None]
                d2 = x - self.mu_post[:, None]
                g[r] = -0.5 * (d1 * d1 - d2 * d2).sum(axis=0)[lo:hi]
        h = _window_walk(g, lo, self.b_index)
        return int(h[0]) if size is None else h


def draw_h_tilde_dependent(panel: PanelData, est: BreakEstimate, max_lag: int, rng=None, size=None, fast=True):
    """Offset(s) of the re-maximized least-squares break under dependent Gaussian resampling."""
    return DependentResampler(panel, est, max_lag).draw(rng, size, fast)


# ---------------------------------------------------------------------------
# Interval


def snr3_statistic(panel: PanelData, est: BreakEstimate) -> float | None:
    """``sqrt(n) |mu1 - mu2|^2 / (m sqrt(log m))``; None for a single series."""
    if panel.m < 2:
        return None
    st = segment_stats(build_prefix(panel), est.b_index)
    d = st.mu1 - st.mu2
    return float(math.sqrt(panel.n) * (d @ d) / (panel.m * math.sqrt(math.log(panel.m))))


@dataclass(frozen=True)
class AdaptiveResult:
    tau_hat: float
    b_index: int
    n: int
    bounds: tuple[int, int]
    level: float
    q_lo: float
    q_hi: float
    ci_index: tuple[int, int]
    h_draws: np.ndarray
    seed: int | None
    diagnostics: dict

    @property
    def ci_tau(self) -> tuple[float, float]:
        return self.ci_index[0] / self.n, self.ci_index[1] / self.n

    @property
    def replicates(self) -> int:
        return len(self.h_draws)

    def with_level(self, level: float) -> "AdaptiveResult":
        """Interval at another miscoverage level from the same draws."""
        q_lo, q_hi, ci = _interval(self.h_draws, level, self.b_index, self.bounds)
        return AdaptiveResult(
            self.tau_hat, self.b_index, self.n, self.bounds, level, q_lo, q_hi, ci,
            self.h_draws, self.seed, self.diagnostics,
        )

    def to_dict(self, include_draws: bool = False) -> dict:
        out = {
            "tau_hat": self.tau_hat,
            "b_index": self.b_index,
            "level": self.level,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
            "ci_index": list(self.ci_index),
            "ci_tau": list(self.ci_tau),
            "replicates": self.replicates,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }
        if include_draws:
            out["h_draws"] = [int(h) for h in self.h_draws]
        return out

    def to_json(self, include_draws: bool = False) -> str:
        return json.dumps(self.to_dict(include_draws), indent=2)


def _interval(h: np.ndarray, level: float, b_hat: int, bounds: tuple[int, int]):
    q_lo, q_hi = (float(v) for v in np.quantile(h, [level / 2, 1 - level / 2]))
    lo, hi = bounds
    left = min(max(math.ceil(b_hat - q_hi - 1e-9), lo), hi)
    right = min(max(math.floor(b_hat - q_lo + 1e-9), lo), hi)
    return q_lo, q_hi, (left, right)


def _replicate_draws(one: Callable[[np.random.Generator], int], replicates: int, seed, threads: int) -> np.ndarray:
    # One stream per replicate so the draws do not depend on the worker count.
    seeds = as_seed_sequence(seed).spawn(replicates)
    return np.asarray(parallel_map(lambda s: one(np.random.default_rng(s)), seeds, threads), dtype=np.int64)


def adaptive_ci(panel: PanelData, config: AdaptiveConfig, family: ModelFamily | str | None = None) -> AdaptiveResult:
    """Break estimate plus a resampling interval at miscoverage ``config.level``."""
    window = TrimWindow(config.c_star)
    bounds = validate_panel(panel, window)
    fam = None if family is None else get_family(family)
    diagnostics: dict = {"method": config.method}
    if config.method == "mle":
        if fam is None:
            raise ValueError("likelihood mode needs a family")
        est = estimate_mle(panel, fam, window)
    else:
        est = estimate_lse(panel, window)

    if config.method == "lse-dependent":
        res = DependentResampler(panel, est, config.max_lag)
        one = lambda r: res.draw(r, fast=config.fast)  # noqa: E731
        diagnostics["max_lag"] = config.max_lag
        diagnostics["gaussian_surrogate"] = False
    else:
        fit = refit_params(panel, est, fam)
        one = lambda r: draw_h_tilde(fit, bounds, r, fast=config.fast)  # noqa: E731
        diagnostics["gaussian_surrogate"] = fit.gaussian_surrogate
        diagnostics["degenerate_fits"] = 0 if fit.degenerate is None else int(np.count_nonzero(fit.degenerate))
        diagnostics["family"] = None if fit.family is None else fit.family.name

    h = _replicate_draws(one, config.replicates, config.seed, config.threads)
    b_hat = est.b_index
    at_edge = (b_hat + h == bounds[0]) | (b_hat + h == bounds[1])
    diagnostics["boundary_fraction"] = float(np.mean(at_edge))
    diagnostics["snr3"] = snr3_statistic(panel, est)
    q_lo, q_hi, ci = _interval(h, config.level, b_hat, bounds)
    return AdaptiveResult(
        tau_hat=est.tau_hat,
        b_index=b_hat,
        n=panel.n,
        bounds=bounds,
        level=config.level,
        q_lo=q_lo,
        q_hi=q_hi,
        ci_index=ci,
        h_draws=h,
        seed=config.seed,
        diagnostics=diagnostics,
    )
