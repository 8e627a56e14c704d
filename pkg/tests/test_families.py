import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, optimize
from scipy import stats as sps

from commonbreak.errors import DegenerateSegment, OutOfSupport, UnknownFamily
from commonbreak.families import family_names, get_family
from family_oracles import make_family, neg_expected_hessian, rand_param


ALL = family_names()


@pytest.mark.parametrize("name", ALL)
def test_score_hessian_finite_differences(name):
    """Central differences at 100 random points, step 1e-5, relative tolerance 1e-5."""
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fam = make_family(name)
    h = 1e-5
    for _ in range(100):
        p = rand_param(name, rng)
        cov = rng.standard_normal(2) if fam.uses_covariates else None
        x = fam.sample(p, rng, cov=cov)
        g = fam.score(p, x, cov)
        H = fam.hessian(p, x, cov)
        for j in range(len(p)):
            e = np.zeros_like(p)
            e[j] = h * max(1.0, abs(p[j]))
            fd_g = (fam.log_density(p + e, x, cov) - fam.log_density(p - e, x, cov)) / (2 * e[j])
            fd_H = (fam.score(p + e, x, cov) - fam.score(p - e, x, cov)) / (2 * e[j])
            np.testing.assert_allclose(g[j], fd_g, rtol=1e-5, atol=1e-5)
            np.testing.assert_allclose(H[:, j], fd_H, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("name", ALL)
def test_fisher_info_equals_negative_expected_hessian(name):
    rng = np.random.default_rng(7)
    fam = make_family(name)
    for _ in range(20):
        p = rand_param(name, rng)
        cov = rng.standard_normal(2) if fam.uses_covariates else None
        info = fam.fisher_info(p, None if cov is None else cov[None, :])
        np.testing.assert_allclose(info, neg_expected_hessian(fam, p, cov), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("name", ["bernoulli", "poisson", "zip", "poisson-natural", "bernoulli-natural"])
def test_discrete_mass_sums_to_one(name):
    rng = np.random.default_rng(3)
    fam = make_family(name)
    for _ in range(10):
        p = rand_param(name, rng)
        xs = np.arange(0, 200.0) if "poisson" in name or name == "zip" else np.array([0.0, 1.0])
        assert abs(np.exp(fam.log_density(p, xs)).sum() - 1) < 1e-10


@pytest.mark.parametrize("name", ["normal", "normal-known-var", "curved-normal"])
def test_continuous_density_integrates_to_one(name):
    fam = make_family(name)
    p = rand_param(name, np.random.default_rng(5))
    total, _ = integrate.quad(lambda x: math.exp(float(fam.log_density(p, x))), -np.inf, np.inf)
    assert abs(total - 1) < 1e-8


def test_tobit_density_integrates_to_one():
    fam = get_family("tobit")
    for z in (-1.5, 0.0, 2.0):
        cont, _ = integrate.quad(lambda x: math.exp(float(fam.log_density([1.0], x, [z]))), 0, np.inf)
        assert abs(cont + math.exp(float(fam.log_density([1.0], 0.0, [z]))) - 1) < 1e-8


def test_log_density_examples():
    assert float(get_family("bernoulli").log_density(0.5, 1.0)) == pytest.approx(math.log(0.5))
    assert float(get_family("poisson").log_density(1.0, 0.0)) == pytest.approx(-1.0)
    zip_ = get_family("zip")
    assert float(zip_.log_density([0.5, 2.0], 0.0)) == pytest.approx(math.log(0.5 + 0.5 * math.exp(-2)))


def test_score_examples():
    assert float(get_family("normal-known-var").score(1.0, 2.0)[0]) == pytest.approx(1.0)
    assert float(get_family("bernoulli").score(0.25, 1.0)[0]) == pytest.approx(4.0)


def test_out_of_support():
    with pytest.raises(OutOfSupport):
        get_family("bernoulli").log_density(0.5, 2.0)
    with pytest.raises(OutOfSupport):
        get_family("poisson").log_density(1.0, 1.5)
    with pytest.raises(OutOfSupport):
        get_family("zip").check_support([-1.0])
    with pytest.raises(OutOfSupport):
        get_family("tobit").check_support([-0.1])


def test_unknownmake_family():
    with pytest.raises(UnknownFamily):
        get_family("negative-binomial")


def test_sampling_examples():
    rng = np.random.default_rng(11)
    b = get_family("bernoulli").sample(1 - 1e-12, rng, size=10_000)
    assert b.mean() >= 0.999
    p = get_family("poisson").sample(4.0, rng, size=100_000)
    assert abs(p.mean() - 4) < 3 * math.sqrt(4 / 1e5)
    t = get_family("tobit").sample([1.0], rng, size=10_000, cov=np.full((10_000, 1), -10.0))
    assert np.mean(t == 0) >= 0.999


def test_fisher_examples():
    assert float(get_family("bernoulli").fisher_info(0.5)[0, 0]) == pytest.approx(4.0)
    assert float(get_family("normal-known-var", sigma2=2.0).fisher_info(0.0)[0, 0]) == pytest.approx(0.5)
    assert float(get_family("curved-normal").fisher_info(1.0)[0, 0]) == pytest.approx(3.0)


def test_mean_variance_examples():
    zip_ = get_family("zip")
    assert float(zip_.mean_variance([0.5, 2.0])[0]) == pytest.approx(1.0)
    assert float(zip_.mean_variance([2 / 3, 3.0])[0]) == pytest.approx(1.0)
    m, v = get_family("poisson").mean_variance(7.0)
    assert (float(m), float(v)) == (7.0, 7.0)


def test_segment_mle_closed_forms():
    f = get_family("bernoulli").segment_mle(np.array([1, 0, 1, 1, 0, 1, 0, 1.0]))
    assert float(f.param[0]) == pytest.approx(5 / 8, abs=1e-15)
    f = get_family("normal").segment_mle(np.array([0.0, 2.0]))
    np.testing.assert_allclose(f.param, [1.0, 1.0], atol=1e-15)
    x = np.random.default_rng(2).poisson(3.0, size=37).astype(float)
    assert float(get_family("poisson").segment_mle(x).param[0]) == pytest.approx(x.mean(), rel=1e-14)
    y = np.random.default_rng(3).normal(2, 3, size=51)
    f = get_family("normal").segment_mle(y)
    np.testing.assert_allclose(f.param, [y.mean(), y.var()], rtol=1e-12)


def test_natural_family_mle_is_inverse_mean():
    x = np.random.default_rng(4).poisson(2.5, size=200).astype(float)
    f = get_family("poisson-natural").segment_mle(x)
    assert float(f.param[0]) == pytest.approx(math.log(x.mean()), rel=1e-12)


def test_degenerate_bernoulli_flagged():
    f = get_family("bernoulli").segment_mle(np.ones(10))
    assert bool(f.degenerate)
    assert 0 < float(f.param[0]) < 1


def test_zip_mle_matches_scipy_optimizer():
    rng = np.random.default_rng(8)
    fam = get_family("zip")
    for _ in range(5):
        x = fam.sample([0.4, 3.0], rng, size=300)
        fit = fam.segment_mle(x)

        def nll(p):
            return -float(np.sum(fam.log_density(p, x)))

        ref = optimize.minimize(nll, x0=[0.3, 2.0], method="L-BFGS-B", bounds=[(0.01, 0.99), (0.01, 100)],
                                options={"ftol": 1e-15, "gtol": 1e-12})
        np.testing.assert_allclose(fit.param, ref.x, atol=1e-4)
        assert float(fit.loglik) >= -ref.fun - 1e-8


def test_zip_mle_monte_carlo_accuracy():
    x = get_family("zip").sample([0.5, 2.0], np.random.default_rng(9), size=10_000)
    s, lam = get_family("zip").segment_mle(x).param
    assert abs(s - 0.5) < 0.05 and abs(lam - 2.0) < 0.15


def test_zip_mle_error_shrinks_with_sample_size():
    fam = get_family("zip")
    rng = np.random.default_rng(10)
    medians = []
    for size in (1_000, 10_000, 100_000):
        errs = [np.abs(fam.segment_mle(fam.sample([0.5, 2.0], rng, size=size)).param - [0.5, 2.0]).max()
                for _ in range(50)]
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_probit_mle_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(12)
    cov = np.column_stack([np.ones(400), rng.standard_normal(400)])
    fam = get_family("probit", dim=2)
    x = fam.sample([0.3, -0.8], rng, cov=cov)
    fit = fam.segment_mle(x, cov)
    ref = sm.Probit(x, cov).fit(disp=0, tol=1e-12)
    np.testing.assert_allclose(fit.param, ref.params, atol=1e-7)
    assert float(fit.loglik) == pytest.approx(ref.llf, rel=1e-10)


def test_tobit_mle_matches_direct_optimizer():
    rng = np.random.default_rng(13)
    cov = np.column_stack([np.ones(300), rng.uniform(-1, 2, 300)])
    fam = get_family("tobit", dim=2)
    x = fam.sample([-0.2, 0.9], rng, cov=cov)

    def nll(b):
        z = cov @ b
        return -np.sum(np.where(x > 0, sps.norm.logpdf(x - z), sps.norm.logcdf(-z)))

    ref = optimize.minimize(nll, x0=np.zeros(2), method="BFGS", options={"gtol": 1e-10})
    fit = fam.segment_mle(x, cov)
    np.testing.assert_allclose(fit.param, ref.x, atol=1e-5)


def test_tobit_singular_design():
    fam = get_family("tobit", dim=2)
    cov = np.column_stack([np.ones(20), np.ones(20)])
    with pytest.raises(DegenerateSegment):
        fam.segment_mle(np.abs(np.random.default_rng(0).standard_normal(20)), cov)


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=40))
def test_curved_normal_root_solves_score(xs):
    x = np.asarray(xs)
    if np.sum(x * x) < 1e-6:
        return
    fam = get_family("curved-normal")
    fit = fam.segment_mle(x)
    if bool(fit.degenerate):
        return
    d = float(fit.param[0])
    g = float(np.sum(fam.score(d, x)))
    assert abs(g) <= 1e-8 * (len(x) / d + d * np.sum(x * x) + np.abs(x).sum())
    root = optimize.brentq(lambda t: float(np.sum(fam.score(t, x))), 1e-9, 1e9, xtol=1e-15, rtol=1e-14)
    assert d == pytest.approx(root, rel=1e-9)


@pytest.mark.parametrize("name", ["bernoulli", "poisson", "zip", "normal", "normal-known-var"])
def test_from_moments_links(name):
    fam = get_family(name)
    p = rand_param(name, np.random.default_rng(21))
    mean, var = fam.mean_variance(p)
    np.testing.assert_allclose(fam.from_moments(mean, var)[..., : len(p)].ravel(), p, rtol=1e-10)


def test_bernoulli_link_variance():
    fam = get_family("bernoulli")
    th = fam.from_moments(0.3, 0.21)
    m, v = fam.mean_variance(th)
    assert float(m) == pytest.approx(0.3) and float(v) == pytest.approx(0.21)
