"""Simulation of the limiting argmax laws of the break estimators.

Three regimes are covered:

* ``a``: the estimator is exactly at the break, so the law is a point mass at 0.
* ``b``: ``argmax_h (-|h|/2 + gamma_L B_h [h <= 0] + gamma_R B_h [h > 0])`` for
  a two-sided Brownian motion ``B``, or ``-|h|/2 + G_h`` for a Gaussian
  process ``G`` with a user covariance (dependent noise).
* ``c``: the argmax over the integers of a two-sided random walk whose steps
  are ``-c1_sq / 2 + gamma_star * W`` plus, for every series with a
  non-vanishing jump, a log-likelihood-ratio (or half squared-deviation)
  increment evaluated at a fresh draw from the segment law on that side.

Continuous-regime paths live on a grid of step ``step`` up to ``horizon``;
ties go to the smallest ``|h|`` and then to negative ``h``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from ._rng import as_seed_sequence, parallel_map
from .errors import CovNotPSD, HorizonOverflow
from .families import ModelFamily, get_family

__all__ = [
    "K0Component",
    "LimitLawSpec",
    "QuantileTable",
    "default_grid",
    "sim_regime_b",
    "sim_regime_b_pair",
    "sim_regime_c",
    "sim_regime_b_dependent",
    "quantile_table",
    "brownian_cov",
    "fbm_cov",
    "dep_cov_from_name",
]

EDGE_FRACTION = 0.95
MAX_DOUBLINGS = 10
CHUNK = 64


@dataclass(frozen=True)
class K0Component:
    """One series whose jump does not vanish.

    ``form="loglik"`` uses log-density differences; ``form="squared"`` uses
    half the difference of squared deviations from the two segment means,
    which is the least-squares analogue.
    """

    family: ModelFamily | str
    pre: tuple[float, ...]
    post: tuple[float, ...]
    form: str = "loglik"

    def __post_init__(self) -> None:
        if self.form not in ("loglik", "squared"):
            raise ValueError("form must be 'loglik' or 'squared'")
        if get_family(self.family).uses_covariates:
            raise ValueError("jump components need a family without covariates")

    def increments(self, side: str, rng: np.random.Generator, size) -> np.ndarray:
        """Walk increments on one side: ``L`` draws from the pre law, ``R`` from the post law."""
        fam = get_family(self.family)
        pre, post = fam.as_param(self.pre), fam.as_param(self.post)
        src, other = (pre, post) if side == "L" else (post, pre)
        z = fam.sample(src, rng, size=size)
        if self.form == "loglik":
            return fam.log_density(other, z) - fam.log_density(src, z)
        mu_src = float(np.ravel(fam.mean_variance(src)[0])[0])
        mu_other = float(np.ravel(fam.mean_variance(other)[0])[0])
        return 0.5 * ((z - mu_src) ** 2 - (z - mu_other) ** 2)

    def to_dict(self) -> dict:
        name = self.family if isinstance(self.family, str) else self.family.name
        return {"family": name, "pre": list(self.pre), "post": list(self.post), "form": self.form}


def brownian_cov(gamma: float = 1.0) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Covariance of ``gamma * B`` for a two-sided Brownian motion ``B``."""
    g2 = gamma * gamma

    def cov(h1, h2):
        same = np.sign(h1) * np.sign(h2) > 0
        return np.where(same, g2 * np.minimum(np.abs(h1), np.abs(h2)), 0.0)

    return cov


def fbm_cov(hurst: float, scale: float = 1.0) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Covariance of ``scale`` times a two-sided fractional Brownian motion pinned at 0."""
    if not 0.0 < hurst < 1.0:
        raise ValueError("hurst exponent must lie in (0, 1)")
    two_h = 2.0 * hurst

    def cov(h1, h2):
        a, b = np.abs(h1) ** two_h, np.abs(h2) ** two_h
        return 0.5 * scale * (a + b - np.abs(h1 - h2) ** two_h)

    return cov


def dep_cov_from_name(spec: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """``brownian:gamma`` or ``fbm:hurst[:scale]``."""
    kind, *args = [s.strip() for s in spec.split(":")]
    vals = [float(a) for a in args]
    if kind == "brownian":
        return brownian_cov(vals[0] if vals else 1.0)
    if kind == "fbm":
        return fbm_cov(vals[0] if vals else 0.5, vals[1] if len(vals) > 1 else 1.0)
    raise ValueError(f"unknown covariance {spec!r}")


@dataclass(frozen=True)
class LimitLawSpec:
    """Selects and parameterizes one limiting argmax law.

    ``gamma_L_star`` and ``gamma_R_star`` are standard-deviation scales, the
    square roots of the starred ratios.
    """

    regime: str = "b"
    gamma_L: float = 1.0
    gamma_R: float = 1.0
    c1_sq: float = 0.0
    gamma_L_star: float = 0.0
    gamma_R_star: float = 0.0
    k0: tuple[K0Component, ...] = ()
    dep_cov: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.regime not in ("a", "b", "c"):
            raise ValueError("regime must be 'a', 'b' or 'c'")
        object.__setattr__(self, "k0", tuple(self.k0))
        if self.regime == "b" and self.dep_cov is None and not (self.gamma_L > 0 and self.gamma_R > 0):
            raise ValueError("regime b needs gamma_L, gamma_R > 0")
        if self.regime == "c":
            if min(self.c1_sq, self.gamma_L_star, self.gamma_R_star) < 0:
                raise ValueError("regime c scales must be non-negative")
            if not (self.c1_sq > 0 or self.k0):
                raise ValueError("regime c needs c1_sq > 0 or at least one jump component")

    def to_dict(self) -> dict:
        out = {"regime": self.regime}
        if self.regime == "b":
            out.update(gamma_L=self.gamma_L, gamma_R=self.gamma_R, dependent=self.dep_cov is not None)
        elif self.regime == "c":
            out.update(
                c1_sq=self.c1_sq,
                gamma_L_star=self.gamma_L_star,
                gamma_R_star=self.gamma_R_star,
                k0=[c.to_dict() for c in self.k0],
            )
        return out


# ---------------------------------------------------------------------------
# Two-sided walk argmax


def _argmax_two_sided(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Signed index of the maximum of ``0, left[j-1] (h=-j), right[j-1] (h=+j)``."""
    rows = np.arange(left.shape[0])
    il = np.argmax(left, axis=1)
    ml = left[rows, il]
    jl = np.where(ml > 0, il + 1, 0)
    ml = np.maximum(ml, 0.0)
    ir = np.argmax(right, axis=1)
    mr = right[rows, ir]
    jr = ir + 1
    take_right = (mr > ml) | ((mr == ml) & (jr < jl))
    return np.where(take_right, jr, -jl)


def _strided_argmax(left, right, strides) -> np.ndarray:
    out = np.empty((len(strides), left.shape[0]), dtype=np.int64)
    for i, s in enumerate(strides):
        out[i] = s * _argmax_two_sided(left[:, s - 1 :: s], right[:, s - 1 :: s])
    return out


def _walk_argmax(
    incr: Callable[[str, int, int], np.ndarray],
    K: int,
    rows: int,
    strides: Sequence[int] = (1,),
    adaptive: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Argmax (in grid units) of a two-sided walk with ``K`` steps per side.

    When the argmax lands within 5% of the horizon the walk is extended by
    appending as many steps again, up to ``MAX_DOUBLINGS`` times.

    Returns the argmax per stride, shape ``(len(strides), rows)``, and the
    number of doublings used by each row.
    """
    left = np.cumsum(incr("L", rows, K), axis=1)
    right = np.cumsum(incr("R", rows, K), axis=1)
    h = _strided_argmax(left, right, strides)
    doublings = np.zeros(rows, dtype=np.int64)
    if not adaptive:
        return h, doublings
    idx = np.arange(rows)
    Kc = K
    flagged = np.any(np.abs(h) >= EDGE_FRACTION * Kc, axis=0)
    while flagged.any():
        if doublings[idx[flagged]].max() >= MAX_DOUBLINGS:
            raise HorizonOverflow(f"argmax still at the horizon after {MAX_DOUBLINGS} doublings")
        sel = np.flatnonzero(flagged)
        idx = idx[sel]
        left, right = left[sel], right[sel]
        left = np.concatenate([left, left[:, -1:] + np.cumsum(incr("L", len(sel), Kc), axis=1)], axis=1)
        right = np.concatenate([right, right[:, -1:] + np.cumsum(incr("R", len(sel), Kc), axis=1)], axis=1)
        Kc *= 2
        doublings[idx] += 1
        hs = _strided_argmax(left, right, strides)
        h[:, idx] = hs
        flagged = np.any(np.abs(hs) >= EDGE_FRACTION * Kc, axis=0)
    return h, doublings


def _chunked(fn: Callable[[np.random.Generator, int], np.ndarray], size: int, seed, threads: int = 1):
    """Run ``fn(rng, rows)`` over chunks with one spawned stream per chunk."""
    n_chunks = max(1, math.ceil(size / CHUNK))
    seeds = as_seed_sequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK, size - i * CHUNK) for i in range(n_chunks)]
    parts = parallel_map(lambda a: fn(np.random.default_rng(a[0]), a[1]), zip(seeds, sizes), threads)
    return parts


# ---------------------------------------------------------------------------
# Regime b


def default_grid(spec: LimitLawSpec) -> tuple[float, float]:
    """``(step, horizon)`` scaled by the largest variance ratio."""
    if spec.dep_cov is not None:
        s = float(max(spec.dep_cov(np.array(1.0), np.array(1.0)), spec.dep_cov(np.array(-1.0), np.array(-1.0))))
        s = max(s, 1e-300)
        return 0.05 * s, 50.0 * s
    g2 = max(spec.gamma_L, spec.gamma_R) ** 2
    return 0.005 * g2, 100.0 * g2


def _check_grid_b(spec: LimitLawSpec, step, horizon) -> tuple[float, float, int]:
    d_step, d_hor = default_grid(spec)
    step = d_step if step is None else float(step)
    horizon = d_hor if horizon is None else float(horizon)
    if step <= 0:
        raise ValueError("step must be positive")
    g2 = max(spec.gamma_L, spec.gamma_R) ** 2
    if horizon < 50.0 * g2 * (1 - 1e-12):
        raise ValueError(f"horizon {horizon:g} is below 50 * max(gamma)^2 = {50 * g2:g}")
    K = int(round(horizon / step))
    return step, K * step, K


def _regime_b_increments(spec: LimitLawSpec, step: float, rng: np.random.Generator):
    sd = math.sqrt(step)
    scale = {"L": spec.gamma_L * sd, "R": spec.gamma_R * sd}

    def incr(side: str, rows: int, count: int) -> np.ndarray:
        return rng.standard_normal((rows, count)) * scale[side] - 0.5 * step

    return incr


def _regime_b_draws(spec, step, horizon, seed, size, strides=(1,), adaptive=True, threads=1):
    if spec.regime != "b" or spec.dep_cov is not None:
        raise ValueError("expected an independent-increment regime-b spec")
    step, horizon, K = _check_grid_b(spec, step, horizon)

    def job(rng, rows):
        return _walk_argmax(_regime_b_increments(spec, step, rng), K, rows, strides, adaptive)

    parts = _chunked(job, size, seed, threads)
    h = np.concatenate([p[0] for p in parts], axis=1) * step
    dbl = np.concatenate([p[1] for p in parts])
    return h, dbl, step, horizon


def sim_regime_b(spec: LimitLawSpec, step=None, horizon=None, rng=None, size=None, adaptive=True):
    """Draw(s) of the Brownian argmax on the grid ``{-H, .., -step, 0, step, .., H}``.

    Returns a float when ``size`` is None, else an array of ``size`` draws.
    """
    n = 1 if size is None else int(size)
    h, _, _, _ = _regime_b_draws(spec, step, horizon, rng, n, adaptive=adaptive)
    return float(h[0, 0]) if size is None else h[0]


def sim_regime_b_pair(spec: LimitLawSpec, step=None, horizon=None, rng=None, size: int = 1000):
    """Coupled draws on grids ``step`` and ``step / 2`` from the same Brownian paths.

    The coarse grid is every other point of the fine grid, so differences
    between the two draw sets isolate the discretization error.
    """
    step, horizon, _ = _check_grid_b(spec, step, horizon)
    h, _, _, _ = _regime_b_draws(spec, step / 2, horizon, rng, int(size), strides=(2, 1))
    return h[0], h[1]


# ---------------------------------------------------------------------------
# Regime c


def _regime_c_increments(spec: LimitLawSpec, rng: np.random.Generator):
    sd = {"L": spec.gamma_L_star, "R": spec.gamma_R_star}

    def incr(side: str, rows: int, count: int) -> np.ndarray:
        out = np.full((rows, count), -0.5 * spec.c1_sq)
        if sd[side] > 0:
            out += sd[side] * rng.standard_normal((rows, count))
        for comp in spec.k0:
            out += comp.increments(side, rng, (rows, count))
        return out

    return incr


def _default_horizon_c(spec: LimitLawSpec) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(0x5EED))
    incr = _regime_c_increments(spec, rng)
    H = 10
    for side in ("L", "R"):
        z = incr(side, 1, 4000)[0]
        mean, var = float(z.mean()), float(z.var())
        if mean >= 0:
            raise ValueError("regime c walk needs a negative drift on both sides")
        H = max(H, math.ceil(50.0 * var / mean**2 + 10.0 / abs(mean)) + 10)
    return int(min(H, 10**6))


def sim_regime_c(spec: LimitLawSpec, horizon: int | None = None, rng=None, size=None, adaptive=True):
    """Integer-valued draw(s) of the two-sided random-walk argmax.

    ``horizon`` defaults to a multiple of the walk's variance-to-squared-drift
    ratio. With ``adaptive=False`` the walk is cut at ``horizon`` exactly.
    """
    if spec.regime != "c":
        raise ValueError("expected a regime-c spec")
    H = _default_horizon_c(spec) if horizon is None else int(horizon)
    if H < 1:
        raise ValueError("horizon must be at least 1")
    n = 1 if size is None else int(size)

    def job(r, rows):
        return _walk_argmax(_regime_c_increments(spec, r), H, rows, (1,), adaptive)[0][0]

    h = np.concatenate(_chunked(job, n, rng))
    return int(h[0]) if size is None else h


# ---------------------------------------------------------------------------
# Regime b with dependent noise


def _dependent_factor(spec: LimitLawSpec, step: float, K: int) -> np.ndarray:
    grid = np.arange(-K, K + 1) * step
    C = np.asarray(spec.dep_cov(grid[:, None], grid[None, :]), dtype=float)
    if not np.allclose(C, C.T, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise CovNotPSD("grid covariance is not symmetric")
    w, V = linalg.eigh(C)
    if w[0] < -1e-8 * max(w[-1], 1e-300):
        raise CovNotPSD(f"grid covariance has eigenvalue {w[0]:.3g} < 0")
    return V * np.sqrt(np.maximum(w, 1e-12 * max(w[-1], 0.0)))


def sim_regime_b_dependent(spec: LimitLawSpec, step=None, horizon=None, rng=None, size=None):
    """Draw(s) of ``argmax (-|h|/2 + G_h)`` for a Gaussian process with covariance ``dep_cov``.

    The default grid is scaled by ``dep_cov(1, 1)``. No horizon extension is
    possible for a general covariance; the fraction of draws at the edge can
    be read from :func:`quantile_table` metadata.
    """
    if spec.dep_cov is None:
        raise ValueError("spec has no dep_cov")
    d_step, d_hor = default_grid(spec)
    step = d_step if step is None else float(step)
    horizon = d_hor if horizon is None else float(horizon)
    K = int(round(horizon / step))
    F = _dependent_factor(spec, step, K)
    drift = -0.5 * np.abs(np.arange(-K, K + 1)) * step
    n = 1 if size is None else int(size)

    def job(r, rows):
        vals = drift[None, :] + (F @ r.standard_normal((F.shape[1], rows))).T
        # order columns by tie priority: h = 0, -1, +1, -2, +2, ...
        return _argmax_two_sided(
            vals[:, :K][:, ::-1] - vals[:, K : K + 1], vals[:, K + 1 :] - vals[:, K : K + 1]
        )

    h = np.concatenate(_chunked(job, n, rng)) * step
    return float(h[0]) if size is None else h


# ---------------------------------------------------------------------------
# Quantile tables


@dataclass(frozen=True)
class QuantileTable:
    """Sorted draws and type-7 empirical quantiles."""

    draws: np.ndarray
    quantiles: dict[float, float]
    replicate_count: int
    grid_meta: dict
    spec: dict
    seed: int | None = None

    def to_dict(self, include_draws: bool = False) -> dict:
        out = {
            "spec": self.spec,
            "grid_meta": self.grid_meta,
            "levels": [float(k) for k in self.quantiles],
            "quantiles": [float(v) for v in self.quantiles.values()],
            "replicate_count": self.replicate_count,
            "seed": self.seed,
        }
        if include_draws:
            out["draws"] = self.draws.tolist()
        return out

    def to_json(self, include_draws: bool = False) -> str:
        return json.dumps(self.to_dict(include_draws), indent=2)


def _table(draws, levels, meta, spec, seed) -> QuantileTable:
    d = np.sort(np.asarray(draws, dtype=float))
    q = np.quantile(d, levels, method="linear")
    return QuantileTable(d, {float(a): float(b) for a, b in zip(levels, q)}, len(d), meta, spec.to_dict(), seed)


def quantile_table(
    spec: LimitLawSpec,
    levels: Sequence[float] = (0.025, 0.05, 0.5, 0.95, 0.975),
    replicates: int = 10_000,
    rng=None,
    step=None,
    horizon=None,
    threads: int = 1,
    refine: bool = False,
) -> QuantileTable | tuple[QuantileTable, QuantileTable]:
    """Empirical quantiles of the limiting law.

    With ``refine=True`` (regime b, independent increments) returns two tables
    computed from the same Brownian paths on grids ``step`` and ``step / 2``.
    """
    if replicates < 100:
        raise ValueError("replicates must be at least 100")
    levels = [float(a) for a in levels]
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if spec.regime == "a":
        return _table(np.zeros(replicates), levels, {}, spec, seed)
    if spec.regime == "c":
        H = _default_horizon_c(spec) if horizon is None else int(horizon)
        draws = sim_regime_c(spec, H, rng, replicates)
        return _table(draws, levels, {"horizon": H}, spec, seed)
    if spec.dep_cov is not None:
        d_step, d_hor = default_grid(spec)
        step = d_step if step is None else step
        horizon = d_hor if horizon is None else horizon
        draws = sim_regime_b_dependent(spec, step, horizon, rng, replicates)
        edge = float(np.mean(np.abs(draws) >= EDGE_FRACTION * horizon))
        return _table(draws, levels, {"step": step, "horizon": horizon, "edge_fraction": edge}, spec, seed)
    if refine:
        step, horizon, _ = _check_grid_b(spec, step, horizon)
        h, dbl, _, _ = _regime_b_draws(spec, step / 2, horizon, rng, replicates, (2, 1), True, threads)
        ext = float(np.mean(dbl > 0))
        coarse = _table(h[0], levels, {"step": step, "horizon": horizon, "extended_fraction": ext}, spec, seed)
        fine = _table(h[1], levels, {"step": step / 2, "horizon": horizon, "extended_fraction": ext}, spec, seed)
        return coarse, fine
    h, dbl, step, horizon = _regime_b_draws(spec, step, horizon, rng, replicates, threads=threads)
    meta = {"step": step, "horizon": horizon, "extended_fraction": float(np.mean(dbl > 0))}
    return _table(h[0], levels, meta, spec, seed)
