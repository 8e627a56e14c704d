"""Synthetic panels with a common mean shift plus stationary noise.

Each series draws from its own random stream. The stream for series ``k`` is
``SeedSequence(entropy=seed, spawn_key=(k,))``, which is exactly the ``k``-th
child of ``SeedSequence(seed).spawn(m)``. Panels are therefore bit-for-bit
reproducible from ``(spec, seed)`` and independent of how series are
scheduled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, signal

from .errors import KernelNotPD, TailNotSummable
from .families import ModelFamily, SegmentParams, get_family
from .panel import PanelData

__all__ = [
    "NoiseSpec",
    "gen_panel",
    "gen_family_panel",
    "truncate_linear",
    "kernel_from_name",
    "coeffs_from_name",
    "series_rngs",
    "break_index",
    "toeplitz_factor",
]

log = logging.getLogger(__name__)

CHOLESKY_MAX_N = 4096
EIG_FLOOR = 1e-12
NOISE_KINDS = ("iid", "nonlinear_ma", "gaussian_process", "linear_process")


def series_rngs(seed, m: int) -> list[np.random.Generator]:
    """One generator per series derived from a master seed.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator`` (from which
    a fresh master seed is drawn).
    """
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(m)]


def break_index(n: int, tau: float) -> int:
    """Floor-based break index for a break fraction."""
    return int(math.floor(n * tau + 1e-9))


# ---------------------------------------------------------------------------
# Catalog


def kernel_from_name(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Autocovariance kernel from ``geometric:rho[:scale]`` or ``polynomial:p[:scale]``."""
    kind, *args = [s.strip() for s in spec.split(":")]
    vals = [float(a) for a in args]
    if kind == "geometric":
        rho = vals[0] if vals else 0.5
        scale = vals[1] if len(vals) > 1 else 1.0
        if not 0 <= abs(rho) < 1:
            raise ValueError("geometric kernel needs |rho| < 1")
        return lambda h: scale * np.power(rho, np.abs(h))
    if kind == "polynomial":
        p = vals[0] if vals else 2.0
        scale = vals[1] if len(vals) > 1 else 1.0
        if p <= 1:
            raise ValueError("polynomial kernel needs decay exponent > 1 to be summable")
        return lambda h: scale / np.power(1.0 + np.abs(h), p)
    raise ValueError(f"unknown kernel {spec!r}")


def coeffs_from_name(spec: str) -> Callable[[np.ndarray], np.ndarray] | np.ndarray:
    """Linear-process coefficients from the catalog or an inline literal list.

    ``geometric:rho`` gives ``rho**j``; ``polynomial:p`` gives ``(j+1)**-p``;
    anything else is parsed as comma-separated numbers.
    """
    head = spec.split(":")[0].strip()
    if head == "geometric":
        rho = float(spec.split(":")[1])
        return lambda j: np.power(rho, j)
    if head == "polynomial":
        p = float(spec.split(":")[1])
        return lambda j: np.power(j + 1.0, -p)
    return np.array([float(v) for v in spec.replace(";", ",").split(",") if v.strip()])


def _tail_beyond(absa: np.ndarray, cap: int) -> float:
    """Remainder past the horizon, extrapolated from the power-law decay
    between ``cap / 2`` and ``cap``. Decay no faster than ``1/j`` means the
    series is not summable."""
    last, mid = absa[cap], absa[cap // 2]
    if last == 0.0:
        return 0.0
    p = math.log(mid / last) / math.log(cap / (cap // 2))
    if p <= 1.0:
        raise TailNotSummable(f"coefficients decay like j^-{p:.3g}, which is not summable")
    return last * (cap + 0.5) / (p - 1.0)


def truncate_linear(
    coeffs: Callable[[np.ndarray], np.ndarray] | Sequence[float],
    tol: float = 1e-8,
    cap: int = 10**6,
) -> tuple[np.ndarray, int]:
    """Smallest lag ``J`` whose absolute tail sum beyond ``J`` is below ``tol``.

    A callable is evaluated at ``j = 0..cap`` and the remainder past ``cap``
    is extrapolated from the observed power-law decay. If the required ``J``
    lies in the upper half of the horizon the sequence is treated as not
    summable at this tolerance.

    Returns
    -------
    (a, J)
        Coefficients ``a[0..J]`` and the truncation lag.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if callable(coeffs):
        a = np.asarray(coeffs(np.arange(cap + 1, dtype=float)), dtype=float)
        finite = False
    else:
        a = np.asarray(coeffs, dtype=float).ravel()
        finite = True
        if a.size == 0:
            raise ValueError("empty coefficient sequence")
    if not np.all(np.isfinite(a)):
        raise TailNotSummable("coefficient sequence has non-finite entries")
    beyond = 0.0
    if not finite:
        beyond = _tail_beyond(np.abs(a), cap)
    absr = np.abs(a)[::-1]
    # tail[J] = sum_{j > J} |a_j| within the evaluated horizon
    tail = np.concatenate([np.cumsum(absr)[::-1][1:], [0.0]]) + beyond
    ok = np.flatnonzero(tail < tol)
    if ok.size == 0 or (not finite and ok[0] > cap // 2):
        raise TailNotSummable(f"tail sum does not fall below {tol:g} within {cap} terms")
    J = int(ok[0])
    return a[: J + 1].copy(), J


# ---------------------------------------------------------------------------
# Gaussian-process factorization


def toeplitz_factor(acov: np.ndarray, label: str = "kernel") -> np.ndarray:
    """Lower factor ``F`` with ``F @ F.T`` equal to the symmetric Toeplitz matrix of ``acov``.

    Falls back to an eigen-decomposition with eigenvalues floored at 1e-12
    when Cholesky fails; substantially negative eigenvalues raise
    :class:`KernelNotPD`.
    """
    acov = np.asarray(acov, dtype=float)
    if acov[0] <= 0:
        raise KernelNotPD(f"{label}: variance at lag 0 must be positive")
    T = linalg.toeplitz(acov)
    try:
        return linalg.cholesky(T, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    w, V = linalg.eigh(T)
    if w[0] < -1e-8 * max(w[-1], 1.0):
        raise KernelNotPD(f"{label}: Toeplitz matrix has eigenvalue {w[0]:.3g} < 0")
    log.warning("%s: flooring %d eigenvalues at %g", label, int(np.sum(w < EIG_FLOOR)), EIG_FLOOR)
    return V * np.sqrt(np.maximum(w, EIG_FLOOR))


def _circulant_sampler(acov: np.ndarray) -> Callable[[np.random.Generator], np.ndarray]:
    n = len(acov)
    c = np.concatenate([acov, acov[-2:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -1e-8 * max(lam.max(), 1.0):
        raise KernelNotPD(f"circulant embedding has eigenvalue {lam.min():.3g} < 0")
    if lam.min() < EIG_FLOOR:
        log.warning("circulant embedding: flooring eigenvalues at %g", EIG_FLOOR)
    root = np.sqrt(np.maximum(lam, 0.0) / len(c))

    def draw(rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(len(c)) + 1j * rng.standard_normal(len(c))
        return np.fft.fft(root * z).real[:n]

    return draw


# ---------------------------------------------------------------------------
# Noise spec and generators


@dataclass(frozen=True)
class NoiseSpec:
    """Stationary noise added to a piecewise-constant mean.

    Parameters
    ----------
    kind
        ``iid``, ``nonlinear_ma`` (``e[t-1] * e[t-2] + e[t]``),
        ``gaussian_process`` or ``linear_process``.
    sigma
        Standard deviation of Normal innovations.
    innovation, innovation_param
        Optional family whose draws, centred at their mean, replace the
        Normal innovations (iid and linear-process kinds).
    kernel
        Autocovariance function of the lag for ``gaussian_process``.
    coeffs
        Coefficient callable or finite sequence for ``linear_process``.
    tol
        Truncation tolerance for ``coeffs``.
    """

    kind: str = "iid"
    sigma: float = 1.0
    innovation: ModelFamily | str | None = None
    innovation_param: tuple[float, ...] | None = None
    kernel: Callable[[np.ndarray], np.ndarray] | None = None
    coeffs: Callable[[np.ndarray], np.ndarray] | Sequence[float] | None = None
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "gaussian_process" and self.kernel is None:
            raise ValueError("gaussian_process noise needs a kernel")
        if self.kind == "linear_process" and self.coeffs is None:
            raise ValueError("linear_process noise needs coefficients")
        if self.innovation is not None and self.innovation_param is None:
            raise ValueError("a family innovation needs innovation_param")


def _innovations(spec: NoiseSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    if spec.innovation is None:
        return rng.normal(0.0, spec.sigma, size=size)
    fam = get_family(spec.innovation)
    mean, _ = fam.mean_variance(spec.innovation_param)
    return fam.sample(spec.innovation_param, rng, size=size) - float(np.asarray(mean).ravel()[0])


def _noise_matrix(spec: NoiseSpec, rngs: list[np.random.Generator], n: int) -> np.ndarray:
    m = len(rngs)
    out = np.empty((m, n))
    if spec.kind == "iid":
        for k, r in enumerate(rngs):
            out[k] = _innovations(spec, r, n)
    elif spec.kind == "nonlinear_ma":
        for k, r in enumerate(rngs):
            e = r.normal(0.0, spec.sigma, size=n + 2)
            out[k] = e[1:-1] * e[:-2] + e[2:]
    elif spec.kind == "gaussian_process":
        acov = np.asarray(spec.kernel(np.arange(n, dtype=float)), dtype=float)
        if n <= CHOLESKY_MAX_N:
            F = toeplitz_factor(acov)
            for k, r in enumerate(rngs):
                out[k] = F @ r.standard_normal(F.shape[1])
        else:
            draw = _circulant_sampler(acov)
            for k, r in enumerate(rngs):
                out[k] = draw(r)
    else:
        a, J = truncate_linear(spec.coeffs, spec.tol)
        for k, r in enumerate(rngs):
            eps = _innovations(spec, r, n + J)
            if J == 0:
                out[k] = a[0] * eps
            else:
                out[k] = signal.fftconvolve(eps, a, mode="valid")
    return out


def _as_means(means, m: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(means, SegmentParams):
        mu1, mu2 = np.asarray(means.theta)[:, 0], np.asarray(means.eta)[:, 0]
    else:
        mu1, mu2 = means
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), (m,))
    mu2 = np.broadcast_to(np.asarray(mu2, dtype=float), (m,))
    return mu1, mu2


def gen_panel(means, tau: float, noise: NoiseSpec, m: int, n: int, seed=None) -> PanelData:
    """Mean-shift panel ``mu1`` for ``t <= floor(n tau)`` and ``mu2`` after, plus noise.

    ``means`` is a pair ``(mu1, mu2)`` of scalars or length-``m`` arrays, or a
    :class:`SegmentParams` whose first coordinate holds the means.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    mu1, mu2 = _as_means(means, m)
    b0 = break_index(n, tau)
    noise_mat = _noise_matrix(noise, series_rngs(seed, m), n)
    mean = np.where(np.arange(n)[None, :] < b0, mu1[:, None], mu2[:, None])
    return PanelData(mean + noise_mat)


def gen_family_panel(
    family: ModelFamily | str,
    theta,
    eta,
    tau: float,
    m: int,
    n: int,
    seed=None,
    covariates: np.ndarray | None = None,
    cov_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> PanelData:
    """Independent draws from ``family`` at ``theta`` before the break and ``eta`` after.

    ``theta`` and ``eta`` broadcast to ``(m, d)``. Covariate families take
    either a fixed ``(m, n, d)`` tensor or ``cov_sampler(rng, n)`` returning
    ``(n, d)`` covariates for one series.
    """
    fam = get_family(family)
    d = fam.param_dim
    th = np.broadcast_to(fam.as_param(theta), (m, d))
    et = np.broadcast_to(fam.as_param(eta), (m, d))
    b0 = break_index(n, tau)
    rngs = series_rngs(seed, m)
    values = np.empty((m, n))
    cov_out = None
    if fam.uses_covariates:
        if covariates is None and cov_sampler is None:
            raise ValueError(f"{fam.name} needs covariates or a covariate sampler")
        cov_out = np.empty((m, n, d))
    for k, r in enumerate(rngs):
        par = np.where(np.arange(n)[:, None] < b0, th[k], et[k])
        if fam.uses_covariates:
            ck = covariates[k] if covariates is not None else np.asarray(cov_sampler(r, n), float)
            cov_out[k] = ck.reshape(n, d)
            values[k] = fam.sample(par, r, cov=cov_out[k])
        else:
            values[k] = fam.sample(par, r)
    return PanelData(values, cov_out)
