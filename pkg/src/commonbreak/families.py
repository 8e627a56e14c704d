"""Parametric model families for segment likelihoods.

Every family works on batched inputs. Parameters carry a trailing axis of
length ``param_dim``; observations broadcast against the remaining leading
axes. Covariate families (probit, tobit) additionally take ``cov`` with a
trailing covariate axis.

Families whose log-likelihood depends on a segment only through a few
additive statistics expose ``stats`` / ``fit_stats`` / ``loglik_stats``.
The MLE profile uses these with prefix sums so every break is evaluated in
O(1) per series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import DegenerateSegment, OutOfSupport, UnknownFamily

__all__ = [
    "SegmentFit",
    "SegmentParams",
    "ModelFamily",
    "NormalKnownVariance",
    "Normal",
    "Bernoulli",
    "Poisson",
    "ZeroInflatedPoisson",
    "Probit",
    "Tobit",
    "NaturalExpFamily",
    "CurvedNormal",
    "newton_solve",
    "get_family",
    "family_names",
]

_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SegmentFit:
    """Result of a (possibly batched) segment maximum-likelihood fit."""

    param: np.ndarray
    loglik: np.ndarray
    degenerate: np.ndarray
    converged: np.ndarray
    iterations: int = 0


@dataclass(frozen=True)
class SegmentParams:
    """Per-series parameters before (``theta``) and after (``eta``) the break.

    Both arrays have shape ``(m, d)``; ``names`` labels the ``d`` coordinates.
    """

    theta: np.ndarray
    eta: np.ndarray
    names: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "names": list(self.names),
            "theta": np.asarray(self.theta).tolist(),
            "eta": np.asarray(self.eta).tolist(),
        }


def _as_param(param, d: int) -> np.ndarray:
    p = np.asarray(param, dtype=float)
    if p.ndim == 0 or p.shape[-1] != d:
        p = p[..., None]
    return p


# ---------------------------------------------------------------------------
# Safeguarded Newton solver


def newton_solve(
    objective: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]],
    start: np.ndarray,
    box: np.ndarray,
    n_obs: np.ndarray,
    *,
    score_tol: float = 1e-10,
    step_tol: float = 1e-12,
    max_iter: int = 100,
    fallback_steps: int = 50,
) -> SegmentFit:
    """Maximize a batch of log-likelihoods inside a box.

    Parameters
    ----------
    objective
        ``objective(theta, idx)`` returns the log-likelihood, gradient and
        Hessian for the batch members ``idx`` evaluated at ``theta``
        (shapes ``(B,)``, ``(B, d)``, ``(B, d, d)``).
    start
        ``(B, d)`` starting values; clipped into the box.
    box
        ``(d, 2)`` lower and upper bounds.
    n_obs
        ``(B,)`` observation counts. Convergence is judged on the per-observation
        score so the tolerance does not depend on the segment length.

    Notes
    -----
    Full Newton steps with step halving on the log-likelihood. Where the
    Hessian is not negative definite the step is a coordinate-scaled gradient
    ascent step, and at most ``fallback_steps`` such steps are taken per
    member before it is declared non-convergent.
    """
    lo, hi = box[:, 0], box[:, 1]
    theta = np.clip(np.array(start, dtype=float), lo, hi)
    B, d = theta.shape
    n_obs = np.maximum(np.asarray(n_obs, dtype=float), 1.0)
    idx_all = np.arange(B)
    ll, g, H = objective(theta, idx_all)
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    fallback_used = np.zeros(B, dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        # Projected score: ignore components pushing against an active bound.
        g_proj = np.where((theta <= lo) & (g < 0) | (theta >= hi) & (g > 0), 0.0, g)
        small = np.max(np.abs(g_proj), axis=1) / n_obs < score_tol
        converged |= active & small
        active &= ~small
        if not active.any():
            break
        a = np.flatnonzero(active)
        Ha, ga = H[a], g[a]
        neg = -Ha
        try:
            eig = np.linalg.eigvalsh(neg)
            nd = eig[:, 0] > 1e-14 * np.maximum(1.0, np.abs(eig[:, -1]))
        except np.linalg.LinAlgError:
            nd = np.zeros(len(a), dtype=bool)
        step = np.empty_like(ga)
        if nd.any():
            step[nd] = np.linalg.solve(neg[nd], ga[nd][..., None])[..., 0]
        if (~nd).any():
            diag = np.abs(np.diagonal(Ha[~nd], axis1=1, axis2=2))
            step[~nd] = ga[~nd] / np.maximum(diag, 1e-8)
            fallback_used[a[~nd]] += 1
        # Halving line search.
        t = np.ones(len(a))
        cand = np.clip(theta[a] + step, lo, hi)
        ll_c, g_c, H_c = objective(cand, a)
        for _ in range(60):
            bad = ~(ll_c >= ll[a] - 1e-13 * np.abs(ll[a])) | ~np.isfinite(ll_c)
            if not bad.any():
                break
            t[bad] *= 0.5
            bi = np.flatnonzero(bad)
            cand[bi] = np.clip(theta[a[bi]] + t[bi, None] * step[bi], lo, hi)
            l2, g2, H2 = objective(cand[bi], a[bi])
            ll_c[bi], g_c[bi], H_c[bi] = l2, g2, H2
        moved = np.max(np.abs(cand - theta[a]), axis=1)
        theta[a], ll[a], g[a], H[a] = cand, ll_c, g_c, H_c
        tiny = moved < step_tol
        converged[a[tiny]] = True
        active[a[tiny]] = False
        exhausted = fallback_used[a] >= fallback_steps
        active[a[exhausted & ~tiny]] = False
    at_edge = np.any(
        (theta <= lo + 1e-12 * np.maximum(1.0, np.abs(lo)))
        | (theta >= hi - 1e-12 * np.maximum(1.0, np.abs(hi))),
        axis=1,
    )
    g_proj = np.where((theta <= lo) & (g < 0) | (theta >= hi) & (g > 0), 0.0, g)
    interior_root = np.max(np.abs(g), axis=1) / n_obs < 1e-8
    degenerate = at_edge & ~interior_root
    converged = converged | (np.max(np.abs(g_proj), axis=1) / n_obs < score_tol)
    return SegmentFit(theta, ll, degenerate, converged, it)


# ---------------------------------------------------------------------------
# Base class


class ModelFamily:
    """Interface shared by every family.

    Subclasses set ``name``, ``param_dim``, ``param_box`` and
    ``uses_covariates`` and implement the per-observation methods.
    """

    name: str = "abstract"
    param_dim: int = 1
    param_names: tuple[str, ...] = ("theta",)
    param_box: np.ndarray
    uses_covariates: bool = False
    # Number of additive sufficient statistics, or None when unavailable.
    n_stats: int | None = None
    # Whether the segment log-likelihood is concave in the parameter.
    concave: bool = True

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    # -- parameter helpers -------------------------------------------------
    def as_param(self, param) -> np.ndarray:
        return _as_param(param, self.param_dim)

    def clip(self, param) -> np.ndarray:
        p = self.as_param(param)
        return np.clip(p, self.param_box[:, 0], self.param_box[:, 1])

    def in_box(self, param) -> np.ndarray:
        p = self.as_param(param)
        return np.all((p > self.param_box[:, 0]) & (p < self.param_box[:, 1]), axis=-1)

    def check_support(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    # -- per-observation interface ----------------------------------------
    def log_density(self, param, x, cov=None) -> np.ndarray:
        raise NotImplementedError

    def score(self, param, x, cov=None) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, param, x, cov=None) -> np.ndarray:
        raise NotImplementedError

    def sample(self, param, rng: np.random.Generator, size=None, cov=None) -> np.ndarray:
        raise NotImplementedError

    def fisher_info(self, param, cov=None) -> np.ndarray:
        raise NotImplementedError

    def mean_variance(self, param, cov=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def from_moments(self, mean, var) -> np.ndarray | None:
        """Parameter identified by a mean and variance, or ``None`` if the
        family is not identified by its first two moments."""
        return None

    # -- sufficient statistics --------------------------------------------
    def stats(self, x) -> np.ndarray:
        """Per-observation additive statistics, shape ``x.shape + (n_stats,)``."""
        raise NotImplementedError

    def prefix_stats(self, values: np.ndarray) -> np.ndarray:
        """Cumulative statistics ``(m, n + 1, s)`` with a leading zero row."""
        s = self.stats(values)
        out = np.zeros((s.shape[0], s.shape[1] + 1, s.shape[2]), dtype=s.dtype)
        np.cumsum(s, axis=1, out=out[:, 1:])
        return out

    def fit_stats(self, T: np.ndarray, start=None) -> SegmentFit:
        raise NotImplementedError

    def loglik_stats(self, param, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- segment fit --------------------------------------------------------
    def segment_mle(self, x, cov=None, start=None) -> SegmentFit:
        """Maximum-likelihood fit of one segment (or a batch along leading axes).

        ``x`` has the observations on its last axis.
        """
        x = self.check_support(x)
        if self.n_stats is not None:
            T = self.stats(x).sum(axis=-2)
            return self.fit_stats(T, start)
        return self._fit_raw(x, cov, start)

    def _fit_raw(self, x, cov, start) -> SegmentFit:
        raise NotImplementedError

    def segment_loglik(self, param, x, cov=None) -> np.ndarray:
        """Total log-likelihood of segment(s) ``x`` at ``param`` (broadcast on leading axes)."""
        p = self.as_param(param)
        return np.sum(self.log_density(p[..., None, :], x, cov), axis=-1)


# ---------------------------------------------------------------------------
# Normal


class NormalKnownVariance(ModelFamily):
    """Normal mean with a fixed variance."""

    name = "normal-known-var"
    param_dim = 1
    param_names = ("mu",)
    n_stats = 4

    def __init__(self, sigma2: float = 1.0, bound: float = 1e10):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.sigma2 = float(sigma2)
        self.param_box = np.array([[-bound, bound]])

    def __repr__(self) -> str:
        return f"NormalKnownVariance(sigma2={self.sigma2})"

    def log_density(self, param, x, cov=None):
        mu = self.as_param(param)[..., 0]
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG2PI + math.log(self.sigma2)) - (x - mu) ** 2 / (2 * self.sigma2)

    def score(self, param, x, cov=None):
        mu = self.as_param(param)[..., 0]
        return ((np.asarray(x, dtype=float) - mu) / self.sigma2)[..., None]

    def hessian(self, param, x, cov=None):
        mu = self.as_param(param)[..., 0]
        shape = np.broadcast_shapes(np.shape(mu), np.shape(x))
        return np.full(shape + (1, 1), -1.0 / self.sigma2)

    def sample(self, param, rng, size=None, cov=None):
        mu = self.as_param(param)[..., 0]
        return rng.normal(mu, math.sqrt(self.sigma2), size=size)

    def fisher_info(self, param, cov=None):
        mu = self.as_param(param)[..., 0]
        return np.full(np.shape(mu) + (1, 1), 1.0 / self.sigma2)

    def mean_variance(self, param, cov=None):
        mu = self.as_param(param)[..., 0]
        return mu, np.full(np.shape(mu), self.sigma2)

    def from_moments(self, mean, var):
        return self.clip(mean)

    # Statistics: count, centred sum, centred square sum, count * centre.
    def stats(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (4,), dtype=np.longdouble)
        out[..., 0] = 1.0
        out[..., 1] = x
        out[..., 2] = x.astype(np.longdouble) ** 2
        out[..., 3] = 0.0
        return out

    def prefix_stats(self, values):
        xl = np.asarray(values, dtype=np.longdouble)
        c = xl.mean(axis=1, keepdims=True)
        xc = xl - c
        s = np.empty(xl.shape + (4,), dtype=np.longdouble)
        s[..., 0] = 1.0
        s[..., 1] = xc
        s[..., 2] = xc * xc
        s[..., 3] = np.broadcast_to(c, xl.shape)
        out = np.zeros((s.shape[0], s.shape[1] + 1, 4), dtype=np.longdouble)
        np.cumsum(s, axis=1, out=out[:, 1:])
        return out

    @staticmethod
    def _moments(T):
        N, S, Q, C = T[..., 0], T[..., 1], T[..., 2], T[..., 3]
        N = np.maximum(N, 1)
        c = C / N
        mean_c = S / N
        ssr = np.maximum(Q - S * mean_c, 0)
        return N, c, mean_c, ssr, S, Q

    def fit_stats(self, T, start=None):
        N, c, mean_c, ssr, _, _ = self._moments(T)
        mu = (c + mean_c).astype(float)
        ll = (-0.5 * N * (_LOG2PI + math.log(self.sigma2)) - ssr / (2 * self.sigma2)).astype(float)
        p = self.clip(mu[..., None])
        deg = np.zeros(np.shape(mu), dtype=bool)
        return SegmentFit(p, ll, deg, ~deg)

    def loglik_stats(self, param, T):
        N, c, _, _, S, Q = self._moments(T)
        dm = self.as_param(param)[..., 0] - c
        rss = Q - 2 * dm * S + N * dm * dm
        return (-0.5 * N * (_LOG2PI + math.log(self.sigma2)) - rss / (2 * self.sigma2)).astype(float)


class Normal(NormalKnownVariance):
    """Normal with unknown mean and variance, parameter ``(mu, var)``."""

    name = "normal"
    param_dim = 2
    param_names = ("mu", "var")

    def __init__(self, bound: float = 1e10, var_floor: float = 1e-12):
        self.param_box = np.array([[-bound, bound], [var_floor, bound]])

    def __repr__(self) -> str:
        return "Normal()"

    def log_density(self, param, x, cov=None):
        p = self.as_param(param)
        mu, v = p[..., 0], p[..., 1]
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG2PI + np.log(v)) - (x - mu) ** 2 / (2 * v)

    def score(self, param, x, cov=None):
        p = self.as_param(param)
        mu, v = p[..., 0], p[..., 1]
        r = np.asarray(x, dtype=float) - mu
        return np.stack([r / v, -0.5 / v + r * r / (2 * v * v)], axis=-1)

    def hessian(self, param, x, cov=None):
        p = self.as_param(param)
        mu, v = p[..., 0], p[..., 1]
        r = np.asarray(x, dtype=float) - mu
        h11 = np.broadcast_to(-1.0 / v, r.shape)
        h12 = -r / v**2
        h22 = 0.5 / v**2 - r * r / v**3
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    def sample(self, param, rng, size=None, cov=None):
        p = self.as_param(param)
        return rng.normal(p[..., 0], np.sqrt(p[..., 1]), size=size)

    def fisher_info(self, param, cov=None):
        p = self.as_param(param)
        v = p[..., 1]
        out = np.zeros(np.shape(v) + (2, 2))
        out[..., 0, 0] = 1.0 / v
        out[..., 1, 1] = 0.5 / v**2
        return out

    def mean_variance(self, param, cov=None):
        p = self.as_param(param)
        return p[..., 0], p[..., 1]

    def from_moments(self, mean, var):
        return self.clip(np.stack(np.broadcast_arrays(np.asarray(mean, float), np.asarray(var, float)), -1))

    def fit_stats(self, T, start=None):
        N, c, mean_c, ssr, _, _ = self._moments(T)
        mu = (c + mean_c).astype(float)
        var = (ssr / N).astype(float)
        p = self.clip(np.stack([mu, var], -1))
        deg = var <= self.param_box[1, 0]
        ll = self.loglik_stats(p, T)
        return SegmentFit(p, ll, deg, np.ones_like(deg))

    def loglik_stats(self, param, T):
        N, c, _, _, S, Q = self._moments(T)
        p = self.as_param(param)
        dm = p[..., 0] - c
        v = p[..., 1]
        rss = Q - 2 * dm * S + N * dm * dm
        return (-0.5 * N * (_LOG2PI + np.log(v)) - rss / (2 * v)).astype(float)


# ---------------------------------------------------------------------------
# Bernoulli and Poisson


class Bernoulli(ModelFamily):
    """Bernoulli success probability."""

    name = "bernoulli"
    param_names = ("p",)
    n_stats = 2

    def __init__(self, eps: float = 1e-10):
        self.param_box = np.array([[eps, 1.0 - eps]])

    def check_support(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all((x == 0) | (x == 1)):
            raise OutOfSupport("Bernoulli observations must be 0 or 1")
        return x

    def log_density(self, param, x, cov=None):
        p = self.as_param(param)[..., 0]
        x = self.check_support(x)
        return special.xlogy(x, p) + special.xlog1py(1 - x, -p)

    def score(self, param, x, cov=None):
        p = self.as_param(param)[..., 0]
        x = self.check_support(x)
        return (x / p - (1 - x) / (1 - p))[..., None]

    def hessian(self, param, x, cov=None):
        p = self.as_param(param)[..., 0]
        x = self.check_support(x)
        return (-x / p**2 - (1 - x) / (1 - p) ** 2)[..., None, None]

    def sample(self, param, rng, size=None, cov=None):
        p = self.as_param(param)[..., 0]
        return (rng.random(size=size if size is not None else np.shape(p)) < p).astype(float)

    def fisher_info(self, param, cov=None):
        p = self.as_param(param)[..., 0]
        return (1.0 / (p * (1 - p)))[..., None, None]

    def mean_variance(self, param, cov=None):
        p = self.as_param(param)[..., 0]
        return p, p * (1 - p)

    def from_moments(self, mean, var):
        return self.clip(mean)

    def stats(self, x):
        x = self.check_support(x)
        return np.stack([np.ones_like(x), x], axis=-1)

    def fit_stats(self, T, start=None):
        N, S = T[..., 0], T[..., 1]
        p_raw = S / np.maximum(N, 1)
        p = self.clip(p_raw[..., None])
        deg = (S <= 0) | (S >= N)
        return SegmentFit(p, self.loglik_stats(p, T), deg, np.ones_like(deg))

    def loglik_stats(self, param, T):
        p = self.as_param(param)[..., 0]
        N, S = T[..., 0], T[..., 1]
        return special.xlogy(S, p) + special.xlog1py(N - S, -p)


def _check_counts(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all((x >= 0) & (x == np.floor(x))):
        raise OutOfSupport("count observations must be non-negative integers")
    return x


class Poisson(ModelFamily):
    """Poisson mean."""

    name = "poisson"
    param_names = ("lam",)
    n_stats = 3

    def __init__(self, lower: float = 1e-10, upper: float = 1e10):
        self.param_box = np.array([[lower, upper]])

    def check_support(self, x):
        return _check_counts(x)

    def log_density(self, param, x, cov=None):
        lam = self.as_param(param)[..., 0]
        x = _check_counts(x)
        return special.xlogy(x, lam) - lam - special.gammaln(x + 1)

    def score(self, param, x, cov=None):
        lam = self.as_param(param)[..., 0]
        return (_check_counts(x) / lam - 1.0)[..., None]

    def hessian(self, param, x, cov=None):
        lam = self.as_param(param)[..., 0]
        return (-_check_counts(x) / lam**2)[..., None, None]

    def sample(self, param, rng, size=None, cov=None):
        lam = self.as_param(param)[..., 0]
        return np.asarray(rng.poisson(lam, size=size), dtype=float)

    def fisher_info(self, param, cov=None):
        lam = self.as_param(param)[..., 0]
        return (1.0 / lam)[..., None, None]

    def mean_variance(self, param, cov=None):
        lam = self.as_param(param)[..., 0]
        return lam, lam

    def from_moments(self, mean, var):
        return self.clip(mean)

    def stats(self, x):
        x = _check_counts(x)
        return np.stack([np.ones_like(x), x, special.gammaln(x + 1)], axis=-1)

    def fit_stats(self, T, start=None):
        N, S = T[..., 0], T[..., 1]
        lam = self.clip((S / np.maximum(N, 1))[..., None])
        deg = S <= 0
        return SegmentFit(lam, self.loglik_stats(lam, T), deg, np.ones_like(deg))

    def loglik_stats(self, param, T):
        lam = self.as_param(param)[..., 0]
        N, S, G = T[..., 0], T[..., 1], T[..., 2]
        return special.xlogy(S, lam) - N * lam - G


# ---------------------------------------------------------------------------
# Zero-inflated Poisson


class ZeroInflatedPoisson(ModelFamily):
    """Zero-inflated Poisson with parameter ``(sigma, lam)``.

    ``sigma`` is the extra point mass at zero and ``lam`` the Poisson mean.
    The box is ``[c1, 1 - c1] x [c2, c3]``.
    """

    name = "zip"
    param_dim = 2
    param_names = ("sigma", "lam")
    n_stats = 5
    concave = False

    def __init__(self, c1: float = 0.01, c2: float = 0.01, c3: float = 100.0):
        if not (0 < c1 < 0.5 and 0 < c2 < c3):
            raise ValueError("invalid ZIP box")
        self.param_box = np.array([[c1, 1.0 - c1], [c2, c3]])

    def __repr__(self) -> str:
        (a, _), (b, c) = self.param_box
        return f"ZeroInflatedPoisson(c1={a}, c2={b}, c3={c})"

    def check_support(self, x):
        return _check_counts(x)

    def log_density(self, param, x, cov=None):
        p = self.as_param(param)
        s, lam = p[..., 0], p[..., 1]
        x = _check_counts(x)
        zero = np.log(s + (1 - s) * np.exp(-lam))
        pos = np.log1p(-s) - lam + special.xlogy(x, lam) - special.gammaln(x + 1)
        return np.where(x == 0, zero, pos)

    def score(self, param, x, cov=None):
        p = self.as_param(param)
        s, lam = p[..., 0], p[..., 1]
        x = _check_counts(x)
        e = np.exp(-lam)
        p0 = s + (1 - s) * e
        ds = np.where(x == 0, (1 - e) / p0, -1.0 / (1 - s))
        dl = np.where(x == 0, -(1 - s) * e / p0, x / lam - 1.0)
        return np.stack([ds, dl], axis=-1)

    def hessian(self, param, x, cov=None):
        p = self.as_param(param)
        s, lam = p[..., 0], p[..., 1]
        x = _check_counts(x)
        e = np.exp(-lam)
        p0 = s + (1 - s) * e
        q = (1 - s) * e / p0
        hss = np.where(x == 0, -((1 - e) / p0) ** 2, -1.0 / (1 - s) ** 2)
        hsl = np.where(x == 0, e / p0 + (1 - e) * (1 - s) * e / p0**2, 0.0)
        hll = np.where(x == 0, q * (1 - q), -x / lam**2)
        return np.stack([np.stack([hss, hsl], -1), np.stack([hsl, hll], -1)], -2)

    def sample(self, param, rng, size=None, cov=None):
        p = self.as_param(param)
        s, lam = p[..., 0], p[..., 1]
        shape = size if size is not None else np.broadcast_shapes(np.shape(s), np.shape(lam))
        inflated = rng.random(size=shape) < s
        counts = rng.poisson(lam, size=shape).astype(float)
        return np.where(inflated, 0.0, counts)

    def mean_variance(self, param, cov=None):
        p = self.as_param(param)
        s, lam = p[..., 0], p[..., 1]
        mean = (1 - s) * lam
        return mean, mean * (1 + s * lam)

    def from_moments(self, mean, var):
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        safe = np.maximum(mean, 1e-12)
        lam = var / safe + mean - 1.0
        lam = np.clip(lam, self.param_box[1, 0], self.param_box[1, 1])
        s = 1.0 - mean / lam
        return self.clip(np.stack([s, lam], -1))

    def fisher_info(self, param, cov=None):
        p = self.as_param(param)
        batch = p.shape[:-1]
        flat = p.reshape(-1, 2)
        out = np.empty((flat.shape[0], 2, 2))
        for i, (s, lam) in enumerate(flat):
            top = int(lam + 40.0 * math.sqrt(lam) + 40)
            xs = np.arange(top + 1, dtype=float)
            w = np.exp(self.log_density((s, lam), xs))
            sc = self.score((s, lam), xs)
            out[i] = np.einsum("x,xi,xj->ij", w, sc, sc)
        return out.reshape(batch + (2, 2))

    # Statistics: count, zeros, sum, sum of log factorials, sum of squares.
    def stats(self, x):
        x = _check_counts(x)
        return np.stack(
            [np.ones_like(x), (x == 0).astype(float), x, special.gammaln(x + 1), x * x], axis=-1
        )

    def _objective(self, T):
        def obj(theta, idx):
            Ti = T[idx]
            N, n0, S = Ti[:, 0], Ti[:, 1], Ti[:, 2]
            npos = N - n0
            s, lam = theta[:, 0], theta[:, 1]
            e = np.exp(-lam)
            p0 = s + (1 - s) * e
            ll = (
                special.xlogy(n0, p0)
                + npos * (np.log1p(-s) - lam)
                + special.xlogy(S, lam)
                - Ti[:, 3]
            )
            a = 1 - e
            q = (1 - s) * e / p0
            gs = n0 * a / p0 - npos / (1 - s)
            gl = -n0 * q - npos + S / lam
            hss = -n0 * (a / p0) ** 2 - npos / (1 - s) ** 2
            hsl = n0 * (e / p0 + a * (1 - s) * e / p0**2)
            hll = n0 * q * (1 - q) - S / lam**2
            g = np.stack([gs, gl], -1)
            H = np.stack([np.stack([hss, hsl], -1), np.stack([hsl, hll], -1)], -2)
            return ll, g, H

        return obj

    def moment_start(self, T) -> np.ndarray:
        N = np.maximum(T[..., 0], 1)
        mean = T[..., 2] / N
        var = np.maximum(T[..., 4] / N - mean**2, 0)
        return self.from_moments(mean, var)

    def fit_stats(self, T, start=None):
        T = np.asarray(T, dtype=float)
        batch = T.shape[:-1]
        Tf = T.reshape(-1, T.shape[-1])
        base = self.moment_start(Tf)
        starts = [base]
        if start is not None:
            starts = [self.clip(np.asarray(start, dtype=float).reshape(-1, 2))]
        else:
            # Two deterministic jitters around the method-of-moments start.
            jit_a = base * np.array([0.5, 1.3]) + np.array([0.25, 0.0])
            jit_b = base * np.array([0.6, 0.7]) + np.array([0.0, 0.1])
            starts += [self.clip(jit_a), self.clip(jit_b)]
        obj = self._objective(Tf)
        best = None
        for st in starts:
            fit = newton_solve(obj, st, self.param_box, Tf[:, 0])
            if best is None:
                best = fit
                continue
            better = (fit.loglik > best.loglik + 1e-12 * np.abs(best.loglik)) & fit.converged
            best = SegmentFit(
                np.where(better[:, None], fit.param, best.param),
                np.where(better, fit.loglik, best.loglik),
                np.where(better, fit.degenerate, best.degenerate),
                np.where(better, fit.converged, best.converged),
                max(fit.iterations, best.iterations),
            )
        all_zero = Tf[:, 1] >= Tf[:, 0]
        return SegmentFit(
            best.param.reshape(batch + (2,)),
            best.loglik.reshape(batch),
            (best.degenerate | all_zero).reshape(batch),
            best.converged.reshape(batch),
            best.iterations,
        )

    def loglik_stats(self, param, T):
        p = self.as_param(param)
        T = np.asarray(T, dtype=float)
        N, n0, S, G = T[..., 0], T[..., 1], T[..., 2], T[..., 3]
        s, lam = p[..., 0], p[..., 1]
        p0 = s + (1 - s) * np.exp(-lam)
        return special.xlogy(n0, p0) + (N - n0) * (np.log1p(-s) - lam) + special.xlogy(S, lam) - G


# ---------------------------------------------------------------------------
# Covariate families


def _linear_index(param, cov) -> np.ndarray:
    return np.sum(np.asarray(cov, dtype=float) * param, axis=-1)


def _mills(z):
    """phi(z) / Phi(z) and phi(z) / Phi(-z), computed in log space."""
    lp = -0.5 * (z * z + _LOG2PI)
    return np.exp(lp - special.log_ndtr(z)), np.exp(lp - special.log_ndtr(-z))


class _CovariateFamily(ModelFamily):
    uses_covariates = True

    def __init__(self, dim: int = 1, bound: float = 50.0):
        if dim < 1:
            raise ValueError("covariate dimension must be at least 1")
        self.param_dim = int(dim)
        self.param_names = tuple(f"beta{j}" for j in range(dim))
        self.param_box = np.tile([-bound, bound], (dim, 1)).astype(float)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.param_dim})"

    def _need_cov(self, cov):
        if cov is None:
            raise ValueError(f"{self.name} requires covariates")
        cov = np.asarray(cov, dtype=float)
        if cov.shape[-1] != self.param_dim:
            raise ValueError(
                f"{self.name}: covariate dimension {cov.shape[-1]} != parameter dimension {self.param_dim}"
            )
        return cov

    # Per-observation pieces: loglik, d loglik / dz, d2 loglik / dz2.
    def _terms(self, z, x):
        raise NotImplementedError

    def log_density(self, param, x, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        return self._terms(z, self.check_support(x))[0]

    def score(self, param, x, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        d1 = self._terms(z, self.check_support(x))[1]
        return d1[..., None] * cov

    def hessian(self, param, x, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        d2 = self._terms(z, self.check_support(x))[2]
        return d2[..., None, None] * cov[..., :, None] * cov[..., None, :]

    def _info_weight(self, z):
        raise NotImplementedError

    def fisher_info(self, param, cov=None):
        """Information averaged over the supplied covariate rows (second-to-last axis)."""
        cov = self._need_cov(cov)
        p = self.as_param(param)
        z = _linear_index(p[..., None, :], cov)
        w = self._info_weight(z)
        return np.einsum("...t,...ti,...tj->...ij", w, cov, cov) / cov.shape[-2]

    def _objective(self, x, cov):
        def obj(beta, idx):
            xi, ci = x[idx], cov[idx]
            z = np.einsum("btj,bj->bt", ci, beta)
            l0, d1, d2 = self._terms(z, xi)
            g = np.einsum("bt,btj->bj", d1, ci)
            H = np.einsum("bt,bti,btj->bij", d2, ci, ci)
            return l0.sum(axis=1), g, H

        return obj

    def _initial(self, x, cov) -> np.ndarray:
        return np.zeros(x.shape[:-1] + (self.param_dim,))

    def _fit_raw(self, x, cov, start):
        cov = self._need_cov(cov)
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        L = x.shape[-1]
        xf = x.reshape(-1, L)
        cf = np.broadcast_to(cov, x.shape + (self.param_dim,)).reshape(-1, L, self.param_dim)
        self._check_design(cf)
        st = self._initial(xf, cf) if start is None else np.asarray(start, float).reshape(-1, self.param_dim)
        fit = newton_solve(self._objective(xf, cf), st, self.param_box, np.full(len(xf), L))
        return SegmentFit(
            fit.param.reshape(batch + (self.param_dim,)),
            fit.loglik.reshape(batch),
            fit.degenerate.reshape(batch),
            fit.converged.reshape(batch),
            fit.iterations,
        )

    def _check_design(self, cf) -> None:
        pass


class Probit(_CovariateFamily):
    """Binary response with success probability ``Phi(cov . beta)``."""

    name = "probit"

    def check_support(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all((x == 0) | (x == 1)):
            raise OutOfSupport("probit observations must be 0 or 1")
        return x

    def _terms(self, z, x):
        # Only the tail matching the outcome is needed: q = (2x - 1) z.
        sign = 2.0 * x - 1.0
        q = sign * z
        ll = special.log_ndtr(q)
        r = np.exp(-0.5 * (q * q + _LOG2PI) - ll)
        return ll, sign * r, -r * (r + q)

    def _info_weight(self, z):
        # phi^2 / (Phi(z) Phi(-z)) is the product of the two Mills ratios.
        r1, r0 = _mills(z)
        return r1 * r0

    def sample(self, param, rng, size=None, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        shape = size if size is not None else np.shape(z)
        return (rng.random(size=shape) < special.ndtr(z)).astype(float)

    def mean_variance(self, param, cov=None):
        cov = self._need_cov(cov)
        pr = special.ndtr(_linear_index(self.as_param(param), cov))
        return pr, pr * (1 - pr)


class Tobit(_CovariateFamily):
    """Censored-at-zero regression ``X = max(0, cov . beta + eps)``, ``eps ~ N(0, 1)``.

    The log-likelihood of a zero is ``log Phi(-z)``; a positive value has the
    unit-variance Normal log-density around ``z``.
    """

    name = "tobit"

    def __init__(self, dim: int = 1, bound: float = 50.0, gram_tol: float = 1e-8):
        super().__init__(dim, bound)
        self.gram_tol = gram_tol

    def check_support(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise OutOfSupport("tobit observations must be non-negative")
        return x

    def _terms(self, z, x):
        _, r0 = _mills(z)
        pos = x > 0
        ll = np.where(pos, -0.5 * (_LOG2PI + (x - z) ** 2), special.log_ndtr(-z))
        d1 = np.where(pos, x - z, -r0)
        d2 = np.where(pos, -1.0, -r0 * (r0 - z))
        return ll, d1, d2

    def _info_weight(self, z):
        phi = stats.norm.pdf(z)
        return phi**2 / np.maximum(special.ndtr(-z), 1e-300) + special.ndtr(z) - z * phi

    def _check_design(self, cf):
        gram = np.einsum("bti,btj->bij", cf, cf) / cf.shape[1]
        lo = np.linalg.eigvalsh(gram)[:, 0]
        if np.any(lo <= self.gram_tol):
            raise DegenerateSegment(
                f"tobit covariate Gram matrix is near singular (min eigenvalue {lo.min():.3g})"
            )

    def _initial(self, x, cov):
        # Least squares of the observed values on the covariates.
        gram = np.einsum("bti,btj->bij", cov, cov)
        rhs = np.einsum("bti,bt->bi", cov, x)
        return np.linalg.solve(gram, rhs[..., None])[..., 0]

    def sample(self, param, rng, size=None, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        shape = size if size is not None else np.shape(z)
        return np.maximum(0.0, z + rng.standard_normal(shape))

    def mean_variance(self, param, cov=None):
        cov = self._need_cov(cov)
        z = _linear_index(self.as_param(param), cov)
        Phi, phi = special.ndtr(z), stats.norm.pdf(z)
        mean = z * Phi + phi
        second = (z * z + 1) * Phi + z * phi
        return mean, second - mean**2


# ---------------------------------------------------------------------------
# One-parameter natural exponential families


@dataclass(frozen=True)
class _NaturalBase:
    cumulant: Callable[[np.ndarray], np.ndarray]
    mean: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray]
    mean_inverse: Callable[[np.ndarray], np.ndarray]
    carrier: Callable[[np.ndarray], np.ndarray]
    support: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator, object], np.ndarray]
    bound: float


def _logit(p):
    return np.log(p) - np.log1p(-p)


_NATURAL_BASES: dict[str, _NaturalBase] = {
    "poisson": _NaturalBase(
        cumulant=np.exp,
        mean=np.exp,
        variance=np.exp,
        mean_inverse=lambda mu: np.log(mu),
        carrier=lambda x: -special.gammaln(x + 1),
        support=_check_counts,
        sampler=lambda th, rng, size: np.asarray(rng.poisson(np.exp(th), size=size), dtype=float),
        bound=23.0,
    ),
    "bernoulli": _NaturalBase(
        cumulant=lambda th: np.logaddexp(0.0, th),
        mean=special.expit,
        variance=lambda th: special.expit(th) * special.expit(-th),
        mean_inverse=_logit,
        carrier=lambda x: np.zeros_like(x),
        support=Bernoulli().check_support,
        sampler=lambda th, rng, size: (
            rng.random(size=size if size is not None else np.shape(th)) < special.expit(th)
        ).astype(float),
        bound=23.0,
    ),
    "normal": _NaturalBase(
        cumulant=lambda th: 0.5 * th * th,
        mean=lambda th: th,
        variance=lambda th: np.ones_like(th),
        mean_inverse=lambda mu: mu,
        carrier=lambda x: -0.5 * (x * x + _LOG2PI),
        support=lambda x: np.asarray(x, dtype=float),
        sampler=lambda th, rng, size: rng.normal(th, 1.0, size=size),
        bound=1e10,
    ),
}


class NaturalExpFamily(ModelFamily):
    """Density ``exp(theta x - b(theta) + h(x))`` in the natural parameter."""

    param_names = ("theta",)
    n_stats = 3

    def __init__(self, base: str = "poisson"):
        if base not in _NATURAL_BASES:
            raise UnknownFamily(f"no natural exponential family base {base!r}")
        self.base_name = base
        self.base = _NATURAL_BASES[base]
        self.name = f"{base}-natural"
        self.param_box = np.array([[-self.base.bound, self.base.bound]])

    def __repr__(self) -> str:
        return f"NaturalExpFamily(base={self.base_name!r})"

    def check_support(self, x):
        return self.base.support(x)

    def log_density(self, param, x, cov=None):
        th = self.as_param(param)[..., 0]
        x = self.check_support(x)
        return th * x - self.base.cumulant(th) + self.base.carrier(x)

    def score(self, param, x, cov=None):
        th = self.as_param(param)[..., 0]
        return (self.check_support(x) - self.base.mean(th))[..., None]

    def hessian(self, param, x, cov=None):
        th = self.as_param(param)[..., 0]
        shape = np.broadcast_shapes(np.shape(th), np.shape(x))
        return np.broadcast_to(-self.base.variance(th), shape)[..., None, None].copy()

    def sample(self, param, rng, size=None, cov=None):
        return self.base.sampler(self.as_param(param)[..., 0], rng, size)

    def fisher_info(self, param, cov=None):
        return self.base.variance(self.as_param(param)[..., 0])[..., None, None]

    def mean_variance(self, param, cov=None):
        th = self.as_param(param)[..., 0]
        return self.base.mean(th), self.base.variance(th)

    def from_moments(self, mean, var):
        lo, hi = self.param_box[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            th = self.base.mean_inverse(np.asarray(mean, dtype=float))
        return self.clip(np.nan_to_num(th, nan=0.0, posinf=hi, neginf=lo))

    def stats(self, x):
        x = self.check_support(x)
        return np.stack([np.ones_like(x), x, self.base.carrier(x)], axis=-1)

    def fit_stats(self, T, start=None):
        N, S = T[..., 0], T[..., 1]
        th = self.from_moments(S / np.maximum(N, 1), None)
        deg = ~self.in_box(th)
        return SegmentFit(th, self.loglik_stats(th, T), deg, np.ones_like(deg))

    def loglik_stats(self, param, T):
        th = self.as_param(param)[..., 0]
        return th * T[..., 1] - T[..., 0] * self.base.cumulant(th) + T[..., 2]


# ---------------------------------------------------------------------------
# Curved Normal


class CurvedNormal(ModelFamily):
    """``N(lam, lam**2)`` with ``lam > 0``, parameterized by ``delta = 1 / lam``.

    The solver, the derivatives and the Fisher information all live in
    ``delta``.
    """

    name = "curved-normal"
    param_names = ("delta",)
    n_stats = 3

    def __init__(self, lower: float = 1e-6, upper: float = 1e6):
        self.param_box = np.array([[lower, upper]])

    def log_density(self, param, x, cov=None):
        d = self.as_param(param)[..., 0]
        x = np.asarray(x, dtype=float)
        return np.log(d) - 0.5 * (x * x * d * d + 1 - 2 * x * d) - 0.5 * _LOG2PI

    def score(self, param, x, cov=None):
        d = self.as_param(param)[..., 0]
        x = np.asarray(x, dtype=float)
        return (1.0 / d - x * x * d + x)[..., None]

    def hessian(self, param, x, cov=None):
        d = self.as_param(param)[..., 0]
        x = np.asarray(x, dtype=float)
        return (-1.0 / d**2 - x * x)[..., None, None]

    def sample(self, param, rng, size=None, cov=None):
        lam = 1.0 / self.as_param(param)[..., 0]
        return rng.normal(lam, lam, size=size)

    def fisher_info(self, param, cov=None):
        d = self.as_param(param)[..., 0]
        return (3.0 / d**2)[..., None, None]

    def mean_variance(self, param, cov=None):
        lam = 1.0 / self.as_param(param)[..., 0]
        return lam, lam * lam

    def from_moments(self, mean, var):
        return self.clip(1.0 / np.maximum(np.asarray(mean, dtype=float), 1e-300))

    def stats(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.ones_like(x), x, x * x], axis=-1)

    def fit_stats(self, T, start=None):
        # The score equation N / d - d S2 + S1 = 0 is a quadratic in d with
        # exactly one positive root.
        N, S1, S2 = T[..., 0], T[..., 1], T[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (S1 + np.sqrt(S1 * S1 + 4 * N * S2)) / (2 * S2)
        d = np.where(S2 > 0, d, np.inf)
        p = self.clip(d[..., None])
        deg = ~self.in_box(p)
        return SegmentFit(p, self.loglik_stats(p, T), deg, np.ones_like(deg))

    def loglik_stats(self, param, T):
        d = self.as_param(param)[..., 0]
        N, S1, S2 = T[..., 0], T[..., 1], T[..., 2]
        return N * np.log(d) - 0.5 * (d * d * S2 + N - 2 * d * S1) - 0.5 * N * _LOG2PI


# ---------------------------------------------------------------------------
# Registry


_REGISTRY: dict[str, Callable[..., ModelFamily]] = {
    "normal-known-var": NormalKnownVariance,
    "normal": Normal,
    "bernoulli": Bernoulli,
    "poisson": Poisson,
    "zip": ZeroInflatedPoisson,
    "probit": Probit,
    "tobit": Tobit,
    "poisson-natural": lambda **kw: NaturalExpFamily("poisson", **kw),
    "bernoulli-natural": lambda **kw: NaturalExpFamily("bernoulli", **kw),
    "normal-natural": lambda **kw: NaturalExpFamily("normal", **kw),
    "curved-normal": CurvedNormal,
}


def family_names() -> list[str]:
    return sorted(_REGISTRY)


def get_family(name: str | ModelFamily, **options) -> ModelFamily:
    """Instantiate a registered family by name; instances pass through."""
    if isinstance(name, ModelFamily):
        return name
    key = str(name).strip().lower()
    if key not in _REGISTRY:
        raise UnknownFamily(f"unknown family {name!r}; known: {', '.join(family_names())}")
    return _REGISTRY[key](**options)
