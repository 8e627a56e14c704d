"""Maximum-likelihood common-break estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, ZeroSignal
from .families import ModelFamily, SegmentParams, get_family
from .lse import BreakEstimate
from .panel import PanelData, TrimWindow, validate_panel

__all__ = [
    "MleProfile",
    "CriterionValue",
    "mle_criterion",
    "mle_profile",
    "estimate_mle",
    "gamma_mle_estimate",
]


@dataclass(frozen=True)
class CriterionValue:
    """Pooled segment log-likelihood at one break, with the fitted parameters."""

    value: float
    theta: np.ndarray
    eta: np.ndarray
    degenerate: np.ndarray


@dataclass(frozen=True)
class MleProfile:
    """Criterion and cached segment fits for every admissible break.

    ``theta_at`` and ``eta_at`` have shape ``(m, n_breaks, d)``; ``flags``
    marks series/break pairs where either segment fit hit the box boundary.
    """

    values: np.ndarray
    theta_at: np.ndarray
    eta_at: np.ndarray
    flags: np.ndarray
    bounds: tuple[int, int]


def _raise_unconverged(conv: np.ndarray, deg: np.ndarray, bs: np.ndarray) -> None:
    bad = ~conv & ~deg
    if bad.any():
        k, j = np.argwhere(bad if bad.ndim == 2 else bad[:, None])[0]
        b = int(bs[j]) if np.ndim(bs) else int(bs)
        raise NoConvergence(
            f"segment solver did not converge for series {k} at break {b}", series=int(k), b_index=b
        )


def _split_stats(family: ModelFamily, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Prefix and suffix sufficient statistics, both indexed by break.

    Suffix sums are accumulated from the right rather than taken as total
    minus prefix, so short post-break segments carry no cancellation error.
    """
    x = family.check_support(values)
    pre = family.prefix_stats(x)
    post = family.prefix_stats(x[:, ::-1])[:, ::-1]
    return pre, post


def mle_criterion(
    panel: PanelData,
    family: ModelFamily | str,
    b_index: int,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> CriterionValue:
    """Sum over series of the segment log-likelihoods at ``b_index``, divided by ``n``.

    ``warm_start`` optionally supplies ``(theta, eta)`` starting values of
    shape ``(m, d)`` for iterative solvers.
    """
    family = get_family(family)
    b = int(b_index)
    x = panel.values
    cov = panel.covariates
    if family.uses_covariates:
        s1 = s2 = None
        if warm_start is not None:
            s1, s2 = warm_start
        f1 = family.segment_mle(x[:, :b], cov[:, :b], start=s1)
        f2 = family.segment_mle(x[:, b:], cov[:, b:], start=s2)
    else:
        P, R = _split_stats(family, x)
        f1 = family.fit_stats(P[:, b])
        f2 = family.fit_stats(R[:, b])
    deg = f1.degenerate | f2.degenerate
    _raise_unconverged(f1.converged & f2.converged, deg, b)
    value = float(np.sum(f1.loglik + f2.loglik) / panel.n)
    return CriterionValue(value, f1.param, f2.param, deg)


def mle_profile(
    panel: PanelData,
    family: ModelFamily | str,
    window: TrimWindow | float = 0.1,
    warm_start: bool = True,
) -> MleProfile:
    """Evaluate the likelihood criterion at every admissible break.

    Families with additive sufficient statistics are evaluated in closed
    form from prefix sums. Covariate families sweep left to right, starting
    each solve from the previous break's roots unless ``warm_start`` is off.
    """
    family = get_family(family)
    if not isinstance(window, TrimWindow):
        window = TrimWindow(float(window))
    lo, hi = validate_panel(panel, window)
    bs = np.arange(lo, hi + 1)
    n = panel.n
    if not family.uses_covariates:
        P, R = _split_stats(family, panel.values)
        T1 = P[:, bs]
        T2 = R[:, bs]
        f1 = family.fit_stats(T1)
        f2 = family.fit_stats(T2)
        deg = f1.degenerate | f2.degenerate
        _raise_unconverged(f1.converged & f2.converged, deg, bs)
        values = (f1.loglik + f2.loglik).sum(axis=0) / n
        return MleProfile(values, f1.param, f2.param, deg, (lo, hi))

    if panel.covariates is None:
        raise ValueError(f"family {family.name} requires panel covariates")
    m, d = panel.m, family.param_dim
    theta = np.empty((m, len(bs), d))
    eta = np.empty((m, len(bs), d))
    flags = np.zeros((m, len(bs)), dtype=bool)
    values = np.empty(len(bs))
    start = None
    for j, b in enumerate(bs):
        cv = mle_criterion(panel, family, int(b), warm_start=start)
        values[j] = cv.value
        theta[:, j], eta[:, j], flags[:, j] = cv.theta, cv.eta, cv.degenerate
        if warm_start:
            start = (cv.theta, cv.eta)
    return MleProfile(values, theta, eta, flags, (lo, hi))


def estimate_mle(
    panel: PanelData,
    family: ModelFamily | str,
    window: TrimWindow | float = 0.1,
    warm_start: bool = True,
) -> BreakEstimate:
    """Likelihood break estimate; ties go to the smallest index."""
    family = get_family(family)
    if not isinstance(window, TrimWindow):
        window = TrimWindow(float(window))
    prof = mle_profile(panel, family, window, warm_start=warm_start)
    j = int(np.argmax(prof.values))
    b = prof.bounds[0] + j
    params = SegmentParams(
        theta=prof.theta_at[:, j].copy(),
        eta=prof.eta_at[:, j].copy(),
        names=tuple(family.param_names),
    )
    return BreakEstimate(
        tau_hat=b / panel.n,
        b_index=b,
        profile=prof.values,
        bounds=prof.bounds,
        method="mle",
        segment_params=params,
        n=panel.n,
        c_star=window.c_star,
        family=family.name,
        flags=prof.flags[:, j].copy(),
    )


def gamma_mle_estimate(
    panel: PanelData, family: ModelFamily | str, est: BreakEstimate
) -> tuple[float, float]:
    """Information-weighted ratio and its unnormalized numerator.

    The information is evaluated at the pre-break fit, in the family's own
    parameterization. Covariate families average it over the pre-break
    covariates of each series.
    """
    family = get_family(family)
    theta = np.asarray(est.segment_params.theta, dtype=float)
    eta = np.asarray(est.segment_params.eta, dtype=float)
    diff = theta - eta
    den = float(np.sum(diff * diff))
    if den <= 0.0:
        raise ZeroSignal("estimated segment parameters coincide in every series")
    if family.uses_covariates:
        info = family.fisher_info(theta, panel.covariates[:, : est.b_index])
    else:
        info = family.fisher_info(theta)
    num = float(np.einsum("ki,kij,kj->", diff, info, diff))
    return num / den, num
