"""Common break estimation and inference for panels of independent series."""

from .adaptive import AdaptiveConfig, AdaptiveResult, adaptive_ci, draw_h_tilde, draw_h_tilde_dependent, refit_params
from .errors import (
    CommonBreakError,
    CovNotPSD,
    DataError,
    DegenerateSegment,
    EmptyWindow,
    HorizonOverflow,
    KernelNotPD,
    LagTooLarge,
    NoConvergence,
    NonFinite,
    NumericalError,
    OutOfSupport,
    PanelParseError,
    TailNotSummable,
    UnknownFamily,
    ZeroSignal,
)
from .families import ModelFamily, SegmentParams, family_names, get_family
from .limits import K0Component, LimitLawSpec, QuantileTable, quantile_table
from .lse import BreakEstimate, GammaEstimates, autocov_estimates, estimate_lse, gamma_estimates
from .mle import estimate_mle, gamma_mle_estimate, mle_criterion, mle_profile
from .noise import NoiseSpec, gen_family_panel, gen_panel
from .panel import PanelData, TrimWindow, read_panel_csv, write_panel_csv

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
