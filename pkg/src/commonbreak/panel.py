"""Panel container, trimming window and prefix-sum segment statistics.

Break index convention: a break at ``b`` splits each series into
observations ``1..b`` and ``b+1..n`` (1-based), i.e. ``x[:b]`` and ``x[b:]``
in numpy terms. The break fraction is ``b / n``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyWindow, NonFinite, PanelParseError

__all__ = [
    "PanelData",
    "TrimWindow",
    "Prefix",
    "SegmentStats",
    "validate_panel",
    "build_prefix",
    "segment_stats",
    "read_panel_csv",
    "read_covariates_csv",
    "write_panel_csv",
    "write_covariates_csv",
]

# Guards ceil/floor against representation error in n * c_star.
_INDEX_EPS = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelData:
    """An ``m x n`` panel, series in rows and time in columns.

    Parameters
    ----------
    values
        Observation matrix. A 1-D array is treated as a single series.
    covariates
        Optional ``m x n x d`` tensor of per-cell covariates.
    """

    values: np.ndarray
    covariates: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2:
            raise PanelParseError(f"panel values must be 2-D, got shape {v.shape}")
        m, n = v.shape
        if m < 1:
            raise PanelParseError("panel needs at least one series")
        if n < 4:
            raise PanelParseError(f"panel needs at least 4 time points, got {n}")
        if not np.all(np.isfinite(v)):
            k, t = np.argwhere(~np.isfinite(v))[0]
            raise NonFinite(f"non-finite value at series {k}, time {t}")
        object.__setattr__(self, "values", _frozen(v))
        if self.covariates is not None:
            c = np.asarray(self.covariates, dtype=float)
            if c.ndim == 2 and m == 1:
                c = c[None, ...]
            if c.ndim == 2:
                c = c[..., None]
            if c.ndim != 3 or c.shape[:2] != (m, n) or c.shape[2] < 1:
                raise PanelParseError(
                    f"covariates must have shape ({m}, {n}, d), got {c.shape}"
                )
            if not np.all(np.isfinite(c)):
                raise NonFinite("non-finite covariate entry")
            object.__setattr__(self, "covariates", _frozen(c))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def cov_dim(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[2]


@dataclass(frozen=True)
class TrimWindow:
    """Trimming fraction ``c_star`` in ``(0, 0.5)``."""

    c_star: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 < self.c_star < 0.5):
            raise EmptyWindow(f"c_star must lie in (0, 0.5), got {self.c_star}")

    def bounds(self, n: int) -> tuple[int, int]:
        """Admissible break indices ``[ceil(n c*), floor(n (1 - c*))]``."""
        lo = max(1, math.ceil(n * self.c_star - _INDEX_EPS))
        hi = min(n - 1, math.floor(n * (1.0 - self.c_star) + _INDEX_EPS))
        if lo > hi:
            raise EmptyWindow(f"no admissible break for n={n}, c_star={self.c_star}")
        return lo, hi


def validate_panel(panel: PanelData, window: TrimWindow) -> tuple[int, int]:
    """Return the inclusive admissible break-index range for ``panel``.

    Panel invariants are enforced at construction, so this reduces to the
    window arithmetic; it is kept as the single entry point used by the
    estimators.
    """
    return window.bounds(panel.n)


@dataclass(frozen=True)
class Prefix:
    """Cumulative sums per series.

    ``sums[k, t]`` and ``sq_sums[k, t]`` hold the running totals of values and
    squared values up to and including column ``t``. Segment statistics are
    computed from a separate extended-precision copy of the series centred
    at its overall mean, which keeps ``Q - S**2 / len`` free of cancellation.
    """

    sums: np.ndarray
    sq_sums: np.ndarray
    center: np.ndarray
    _cs: np.ndarray = field(repr=False)
    _cq: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.sums.shape[0]

    @property
    def n(self) -> int:
        return self.sums.shape[1]

    def ssr(self, b: np.ndarray | int) -> tuple[np.ndarray, np.ndarray]:
        """Within-segment residual sums of squares at break(s) ``b``.

        Returns arrays of shape ``(m,) + np.shape(b)`` for the pre- and
        post-break segments, in extended precision.
        """
        b = np.asarray(b)
        n = self.n
        s1 = self._cs[:, b]
        q1 = self._cq[:, b]
        s2 = self._cs[:, n][..., None] - s1 if b.ndim else self._cs[:, n] - s1
        q2 = self._cq[:, n][..., None] - q1 if b.ndim else self._cq[:, n] - q1
        bl = b.astype(np.longdouble)
        r1 = q1 - s1 * s1 / bl
        r2 = q2 - s2 * s2 / (n - bl)
        return np.maximum(r1, 0), np.maximum(r2, 0)


def build_prefix(panel: PanelData) -> Prefix:
    """Prefix sums of values and squared values for every series."""
    x = panel.values
    xl = x.astype(np.longdouble)
    sums = np.cumsum(xl, axis=1)
    sq = np.cumsum(xl * xl, axis=1)
    center = np.mean(xl, axis=1)
    xc = xl - center[:, None]
    zero = np.zeros((panel.m, 1), dtype=np.longdouble)
    cs = np.concatenate([zero, np.cumsum(xc, axis=1)], axis=1)
    cq = np.concatenate([zero, np.cumsum(xc * xc, axis=1)], axis=1)
    return Prefix(
        sums=sums.astype(float),
        sq_sums=sq.astype(float),
        center=center.astype(float),
        _cs=cs,
        _cq=cq,
    )


@dataclass(frozen=True)
class SegmentStats:
    """Segment means and population variances for one break index."""

    mu1: np.ndarray
    mu2: np.ndarray
    s1sq: np.ndarray
    s2sq: np.ndarray


def segment_stats(prefix: Prefix, b_index: int) -> SegmentStats:
    """Means and variances (divisor = segment length) either side of ``b_index``."""
    n = prefix.n
    b = int(b_index)
    if not 1 <= b <= n - 1:
        raise EmptyWindow(f"break index {b} outside 1..{n - 1}")
    cs, cq = prefix._cs, prefix._cq
    s1 = cs[:, b]
    s2 = cs[:, n] - s1
    r1, r2 = prefix.ssr(b)
    c = prefix.center.astype(np.longdouble)
    return SegmentStats(
        mu1=(c + s1 / b).astype(float),
        mu2=(c + s2 / (n - b)).astype(float),
        s1sq=(r1 / b).astype(float),
        s2sq=(r2 / (n - b)).astype(float),
    )


def _parse_rows(path: Path, what: str) -> list[list[float]]:
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells) or cells[0].startswith("#"):
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise PanelParseError(
                    f"{path}: row {lineno} of the {what} file has a non-numeric cell"
                ) from None
            if not all(math.isfinite(v) for v in vals):
                raise NonFinite(f"{path}: row {lineno} of the {what} file has a non-finite value")
            rows.append(vals)
    if not rows:
        raise PanelParseError(f"{path}: the {what} file is empty")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise PanelParseError(
                f"{path}: {what} data row {i + 1} has {len(r)} columns, expected {width}"
            )
    return rows


def read_panel_csv(path: str | Path, covariates: str | Path | None = None) -> PanelData:
    """Load a wide-format panel, one row per series, optionally with covariates.

    The covariate file holds ``m * n`` rows of ``d`` columns ordered by series
    then time.
    """
    path = Path(path)
    values = np.array(_parse_rows(path, "panel"), dtype=float)
    cov = None
    if covariates is not None:
        cpath = Path(covariates)
        flat = np.array(_parse_rows(cpath, "covariate"), dtype=float)
        m, n = values.shape
        if flat.shape[0] != m * n:
            raise PanelParseError(
                f"{cpath}: expected {m * n} covariate rows for a {m}x{n} panel, got {flat.shape[0]}"
            )
        cov = flat.reshape(m, n, flat.shape[1])
    return PanelData(values, cov)


def write_panel_csv(panel: PanelData, path: str | Path) -> None:
    np.savetxt(path, panel.values, delimiter=",", fmt="%.17g")


def write_covariates_csv(panel: PanelData, path: str | Path) -> None:
    if panel.covariates is None:
        raise PanelParseError("panel has no covariates to write")
    flat = panel.covariates.reshape(panel.m * panel.n, panel.cov_dim)
    np.savetxt(path, flat, delimiter=",", fmt="%.17g")
