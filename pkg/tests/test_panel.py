import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from commonbreak.errors import EmptyWindow, NonFinite, PanelParseError
from commonbreak.panel import (
    PanelData,
    TrimWindow,
    build_prefix,
    read_panel_csv,
    segment_stats,
    validate_panel,
    write_covariates_csv,
    write_panel_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
panels = st.integers(1, 4).flatmap(
    lambda m: st.integers(4, 30).flatmap(lambda n: arrays(np.float64, (m, n), elements=finite))
)


def naive_stats(x, b):
    a, c = x[:, :b], x[:, b:]
    return a.mean(1), c.mean(1), a.var(1), c.var(1)


@pytest.mark.parametrize(
    "n,c,expected", [(100, 0.1, (10, 90)), (4, 0.25, (1, 3)), (10, 0.49, (5, 5)), (10, 0.3, (3, 7))]
)
def test_window_bounds(n, c, expected):
    assert TrimWindow(c).bounds(n) == expected


@pytest.mark.parametrize("c", [0.6, 0.5, 0.0, -0.1])
def test_window_out_of_range(c):
    with pytest.raises(EmptyWindow):
        TrimWindow(c).bounds(10)


def test_panel_rejects_nonfinite_and_short():
    with pytest.raises(NonFinite):
        PanelData(np.array([[1.0, np.nan, 2.0, 3.0]]))
    with pytest.raises(ValueError):
        PanelData(np.ones((2, 3)))
    with pytest.raises(NonFinite):
        PanelData(np.ones((1, 4)), covariates=np.full((1, 4, 1), np.inf))


def test_panel_is_read_only():
    p = PanelData(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0
    assert (p.m, p.n) == (2, 5)


@pytest.mark.parametrize(
    "series,S,Q",
    [
        ([1, 2, 3, 0], [1, 3, 6, 6], [1, 5, 14, 14]),
        ([0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]),
        ([1, -1, 1, -1], [1, 0, 1, 0], [1, 2, 3, 4]),
    ],
)
def test_prefix_sums(series, S, Q):
    pre = build_prefix(PanelData(np.array([series], float)))
    np.testing.assert_allclose(pre.sums[0], S)
    np.testing.assert_allclose(pre.sq_sums[0], Q)


@pytest.mark.parametrize(
    "series,b,expected",
    [
        ([5, 5, 5, 5], 2, (5, 5, 0, 0)),
        ([0, 0, 4, 4], 2, (0, 4, 0, 0)),
        ([1, 3, 2, 6], 2, (2, 4, 1, 4)),
    ],
)
def test_segment_stats_examples(series, b, expected):
    s = segment_stats(build_prefix(PanelData(np.array([series], float))), b)
    np.testing.assert_allclose([s.mu1[0], s.mu2[0], s.s1sq[0], s.s2sq[0]], expected, atol=1e-12)


@given(panels, st.data())
def test_segment_stats_match_naive(x, data):
    lo, hi = validate_panel(PanelData(x), TrimWindow(0.1))
    b = data.draw(st.integers(lo, hi))
    s = segment_stats(build_prefix(PanelData(x)), b)
    scale = 1.0 + np.abs(x).max()
    for got, want, sc in zip((s.mu1, s.mu2, s.s1sq, s.s2sq), naive_stats(x, b), (scale, scale, scale**2, scale**2)):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10 * sc)
    assert np.all(s.s1sq >= 0) and np.all(s.s2sq >= 0)


@given(panels, finite, st.floats(0.1, 10.0))
def test_shift_and_scale(x, c, a):
    b = x.shape[1] // 2
    base = segment_stats(build_prefix(PanelData(x)), b)
    shifted = segment_stats(build_prefix(PanelData(x + c)), b)
    scaled = segment_stats(build_prefix(PanelData(a * x)), b)
    tol = 1e-9 * (1 + np.abs(x).max() + abs(c)) ** 2
    np.testing.assert_allclose(shifted.mu1, base.mu1 + c, atol=tol)
    np.testing.assert_allclose(shifted.s2sq, base.s2sq, atol=tol)
    np.testing.assert_allclose(scaled.mu2, a * base.mu2, atol=tol * a)
    np.testing.assert_allclose(scaled.s1sq, a * a * base.s1sq, atol=tol * a * a)


def test_prefix_precision_large_offset():
    rng = np.random.default_rng(1)
    x = 1e8 + rng.standard_normal((2, 100_000))
    b = 40_000
    s = segment_stats(build_prefix(PanelData(x)), b)
    np.testing.assert_allclose(s.s1sq, x[:, :b].var(1), rtol=1e-10)
    np.testing.assert_allclose(s.s2sq, x[:, b:].var(1), rtol=1e-10)


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    p = PanelData(rng.standard_normal((3, 7)), rng.standard_normal((3, 7, 2)))
    write_panel_csv(p, tmp_path / "p.csv")
    write_covariates_csv(p, tmp_path / "c.csv")
    q = read_panel_csv(tmp_path / "p.csv", tmp_path / "c.csv")
    np.testing.assert_array_equal(p.values, q.values)
    np.testing.assert_array_equal(p.covariates, q.covariates)


def test_csv_parse_error_names_row(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,2,3,4\n1,2,oops,4\n")
    with pytest.raises(PanelParseError, match="row 2"):
        read_panel_csv(f)
    f.write_text("1,2,3,4\n1,2,3\n")
    with pytest.raises(PanelParseError, match="row 2"):
        read_panel_csv(f)
