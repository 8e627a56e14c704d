"""Least-squares common-break estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LagTooLarge, ZeroSignal
from .families import SegmentParams
from .panel import PanelData, Prefix, TrimWindow, build_prefix, segment_stats, validate_panel

__all__ = [
    "BreakEstimate",
    "GammaEstimates",
    "lse_criterion",
    "lse_profile",
    "estimate_lse",
    "gamma_estimates",
    "autocov_estimates",
]


@dataclass(frozen=True)
class BreakEstimate:
    """Estimated common break and the criterion profile it maximizes.

    ``profile[i]`` is the criterion at break index ``lo + i`` where
    ``(lo, hi) = bounds``.
    """

    tau_hat: float
    b_index: int
    profile: np.ndarray
    bounds: tuple[int, int]
    method: str
    segment_params: SegmentParams
    n: int
    c_star: float
    family: str | None = None
    flags: np.ndarray | None = field(default=None, repr=False)

    @property
    def b_grid(self) -> np.ndarray:
        return np.arange(self.bounds[0], self.bounds[1] + 1)

    def value_at(self, b: int) -> float:
        return float(self.profile[int(b) - self.bounds[0]])

    def to_dict(self, include_profile: bool = False) -> dict:
        out = {
            "method": self.method,
            "family": self.family,
            "tau_hat": self.tau_hat,
            "b_index": self.b_index,
            "n": self.n,
            "c_star": self.c_star,
            "window": list(self.bounds),
            "criterion_max": float(self.profile[self.b_index - self.bounds[0]]),
            "segment_params": self.segment_params.as_dict(),
        }
        if self.flags is not None:
            out["degenerate_segments"] = int(np.count_nonzero(self.flags))
        if include_profile:
            out["profile"] = {"b_index": self.b_grid.tolist(), "value": self.profile.tolist()}
        return out


@dataclass(frozen=True)
class GammaEstimates:
    """Signal-weighted variance ratios that scale the limiting processes."""

    gamma_L_sq: float
    gamma_R_sq: float
    gamma_L_star_sq: float
    gamma_R_star_sq: float
    c1_sq: float
    delta_norm_sq: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def lse_criterion(prefix: Prefix, b_index: int) -> float:
    """Negative pooled within-segment sum of squares at ``b_index``, divided by ``n``."""
    r1, r2 = prefix.ssr(int(b_index))
    return float(-(r1 + r2).sum() / prefix.n)


def lse_profile(prefix: Prefix, lo: int, hi: int) -> np.ndarray:
    """Criterion at every break index in ``lo..hi`` (inclusive)."""
    r1, r2 = prefix.ssr(np.arange(lo, hi + 1))
    return (-(r1 + r2).sum(axis=0) / prefix.n).astype(float)


def estimate_lse(panel: PanelData, window: TrimWindow | float = 0.1) -> BreakEstimate:
    """Least-squares break estimate; ties go to the smallest index."""
    if not isinstance(window, TrimWindow):
        window = TrimWindow(float(window))
    lo, hi = validate_panel(panel, window)
    prefix = build_prefix(panel)
    prof = lse_profile(prefix, lo, hi)
    b = lo + int(np.argmax(prof))
    st = segment_stats(prefix, b)
    params = SegmentParams(
        theta=np.column_stack([st.mu1, st.s1sq]),
        eta=np.column_stack([st.mu2, st.s2sq]),
        names=("mean", "var"),
    )
    return BreakEstimate(
        tau_hat=b / panel.n,
        b_index=b,
        profile=prof,
        bounds=(lo, hi),
        method="lse",
        segment_params=params,
        n=panel.n,
        c_star=window.c_star,
    )


def gamma_estimates(panel: PanelData, est: BreakEstimate) -> GammaEstimates:
    """Plug-in ratios from the segment means and variances at the estimated break.

    The starred versions are unnormalized sums over all series, since the
    subset of series with non-vanishing jumps is not observable.
    """
    st = segment_stats(build_prefix(panel), est.b_index)
    w = (st.mu1 - st.mu2) ** 2
    total = float(w.sum())
    if total <= 0.0:
        raise ZeroSignal("estimated segment means coincide in every series")
    left = float(np.dot(w, st.s1sq))
    right = float(np.dot(w, st.s2sq))
    return GammaEstimates(
        gamma_L_sq=left / total,
        gamma_R_sq=right / total,
        gamma_L_star_sq=left,
        gamma_R_star_sq=right,
        c1_sq=total,
        delta_norm_sq=total,
    )


def autocov_estimates(panel: PanelData, est: BreakEstimate, max_lag: int) -> np.ndarray:
    """Pre-break sample autocovariances, shape ``(m, max_lag + 1)``.

    Lag ``l`` averages ``x[t] * x[t + l]`` over the ``b - l`` available pairs
    in the pre-break segment and subtracts the squared segment mean.
    """
    L = int(max_lag)
    if L < 0:
        raise LagTooLarge("max_lag must be non-negative")
    if L >= panel.n * est.c_star - 1:
        raise LagTooLarge(
            f"max_lag={L} must be below n*c_star - 1 = {panel.n * est.c_star - 1:g}"
        )
    b = est.b_index
    x = panel.values[:, :b]
    mu = x.mean(axis=1)
    out = np.empty((panel.m, L + 1))
    for lag in range(L + 1):
        out[:, lag] = np.einsum("kt,kt->k", x[:, : b - lag], x[:, lag:]) / (b - lag) - mu * mu
    return out
