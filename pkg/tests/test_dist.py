import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from manyserver.dist import (
    Coxian,
    EquilibriumMeasure,
    Exponential,
    HyperExponential,
    Lognormal,
    Pareto,
    Uniform,
    Weibull,
    parse_service,
)
from manyserver.errors import ConfigError, DomainError

FAMILIES = [
    Exponential(),
    Lognormal(1.0),
    Lognormal(0.5),
    Weibull(0.6),
    Weibull(2.0),
    Pareto(2.5),
    Uniform(),
    Coxian(0.3, 2.0, 0.5),
    HyperExponential(0.3, 3.0, 0.6),
]
ids = [d.spec for d in FAMILIES]


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_unit_mean(dist):
    mean = integrate.quad(dist.sf, 0, dist.support_end if math.isfinite(dist.support_end) else np.inf, limit=400)[0]
    assert mean == pytest.approx(1.0, abs=1e-7)
    assert dist.equilibrium_cdf(0.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_cdf_shape(dist):
    x = np.linspace(0, 8, 401)
    G = dist.cdf(x)
    assert G[0] == 0.0
    assert np.all(np.diff(G) >= -1e-15)
    assert np.all(dist.pdf(x[x < dist.support_end]) >= 0)
    assert np.all(np.isfinite(dist.hazard(x[(x > 0) & (x < dist.support_end)])))


def test_evaluate_examples():
    assert Exponential().evaluate(0.0)[:3] == pytest.approx((0.0, 1.0, 1.0))
    ev = Uniform().evaluate(1.0)
    assert (ev.cdf, ev.pdf, ev.hazard) == pytest.approx((0.5, 0.5, 1.0))
    assert not ev.beyond_support
    at_end = Uniform().evaluate(2.0)
    assert at_end.beyond_support and at_end.cdf == 1.0 and at_end.pdf == 0.0
    with pytest.raises(DomainError):
        Exponential().evaluate(-0.1)


def test_equilibrium_cdf_examples():
    assert Uniform().equilibrium_cdf(1.0) == pytest.approx(0.75, abs=1e-12)
    assert Exponential().equilibrium_cdf(60.0) == pytest.approx(1.0, abs=1e-12)
    assert Uniform().equilibrium_cdf(5.0) == 1.0
    with pytest.raises(DomainError):
        Uniform().equilibrium_cdf(-1.0)


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_equilibrium_cdf_matches_quadrature(dist):
    for a in (0.3, 1.0, 1.9, 4.0):
        ref = integrate.quad(dist.sf, 0, min(a, dist.support_end), limit=200)[0]
        assert dist.equilibrium_cdf(a) == pytest.approx(ref, abs=1e-8)


def test_equilibrium_measure_view():
    eq = EquilibriumMeasure(Uniform())
    assert eq.density(0.5) == pytest.approx(0.75)
    assert eq.mass == pytest.approx(1.0)
    assert eq.cdf(1.0) == pytest.approx(0.75)


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_hazard_integral_identity(dist):
    hi = min(5.0, dist.support_end * 0.99)
    for a, b in [(0.0, 0.5 * hi), (0.2 * hi, hi), (0.1, 0.1)]:
        ref = integrate.quad(dist.hazard, a, b, limit=400)[0] if b > a else 0.0
        assert dist.hazard_integral(a, b) == pytest.approx(ref, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(0, 1), st.floats(0, 1))
def test_hazard_integral_property(dist, u, v):
    hi = min(6.0, 0.995 * dist.support_end)
    a, b = sorted((u * hi, v * hi))
    lhs = dist.hazard_integral(a, b)
    rhs = math.log(dist.sf(a)) - math.log(dist.sf(b))
    assert lhs == pytest.approx(rhs, abs=1e-9)
    if b - a > 1e-3:
        assert lhs == pytest.approx(integrate.quad(dist.hazard, a, b, limit=400)[0], abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(FAMILIES), st.lists(st.floats(0, 30), min_size=2, max_size=10))
def test_equilibrium_cdf_monotone(dist, pts):
    pts = np.sort(pts)
    vals = dist.equilibrium_cdf(pts)
    assert np.all(np.diff(vals) >= -1e-12)
    assert np.all((vals >= 0) & (vals <= 1))


def test_renewal_function_examples():
    ex = Exponential()
    assert ex.renewal_function(0.0) == 1.0
    assert ex.renewal_function(0.5) == pytest.approx(1.5, abs=1e-3)
    assert ex.renewal_function(2.0) == pytest.approx(3.0, abs=1e-3)
    # uniform on [0, 2]: U(t) = exp(t/2) for t <= 2
    assert Uniform().renewal_function(1.0) == pytest.approx(math.exp(0.5), abs=1e-5)


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_renewal_function_bounds(dist):
    grid, U = dist.renewal_grid(4.0, 1e-2)
    assert np.all(np.diff(U) >= -1e-12)
    assert np.all(U >= 1 + dist.cdf(grid) - 1e-9)


def test_renewal_function_long_run_slope():
    # elementary renewal theorem: U(t) ~ t + const for unit mean
    U = Lognormal(0.5)
    a, b = U.renewal_function(20.0, 1e-2), U.renewal_function(30.0, 1e-2)
    assert (b - a) / 10.0 == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_sampling_matches_law(dist):
    rng = np.random.default_rng(11)
    v = dist.sample(rng, 100_000)
    assert np.all(v > 0)
    assert 0.98 <= v.mean() <= 1.02 or dist.kind in ("pareto", "weibull")
    assert abs(np.mean(v <= 1.0) - dist.cdf(1.0)) < 0.01
    assert stats.kstest(v, dist.cdf).statistic < 0.01


def test_uniform_samples_inside_support():
    v = Uniform().sample(np.random.default_rng(0), 10_000)
    assert np.all((v > 0) & (v < 2))


def test_sampling_reproducible():
    d = Lognormal(1.0)
    a = d.sample(np.random.default_rng(5), 50)
    b = d.sample(np.random.default_rng(5), 50)
    assert np.array_equal(a, b)


def test_residual_exponential_memoryless():
    r = Exponential().sample_residual(3.7, np.random.default_rng(2), 100_000)
    assert 0.98 <= r.mean() <= 1.02


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_residual_at_zero_matches_service(dist):
    a = dist.sample(np.random.default_rng(1), 10_000)
    b = dist.sample_residual(0.0, np.random.default_rng(2), 10_000)
    ks = stats.ks_2samp(a, b)
    assert ks.statistic < 1.63 * math.sqrt(2 / 10_000)


def test_residual_uniform_conditional():
    r = Uniform().sample_residual(1.0, np.random.default_rng(3), 20_000)
    assert np.all((r > 0) & (r < 1))
    assert abs(np.mean(r <= 0.5) - 0.5) < 0.02


@pytest.mark.parametrize("dist", FAMILIES, ids=ids)
def test_residual_law(dist):
    age = 0.8 if dist.support_end > 0.8 else 0.1
    r = dist.sample_residual(age, np.random.default_rng(4), 40_000)
    cond = lambda u: 1.0 - dist.sf(age + np.asarray(u)) / dist.sf(age)  # noqa: E731
    assert stats.kstest(r, cond).statistic < 0.012


def test_residual_beyond_support_rejected():
    with pytest.raises(DomainError):
        Uniform().sample_residual(2.0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        Exponential().sample_residual(-1.0, np.random.default_rng(0))


def test_mean_residual_life():
    assert Exponential().mean_residual_life(2.3) == pytest.approx(1.0)
    assert Uniform().mean_residual_life(1.0) == pytest.approx(0.5)
    ln = Lognormal(1.0)
    x = 1.5
    ref = integrate.quad(ln.sf, x, np.inf)[0] / ln.sf(x)
    assert ln.mean_residual_life(x) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("exp", Exponential()),
        ("lognormal:sigma=1", Lognormal(1.0)),
        ("weibull:k=2", Weibull(2.0)),
        ("pareto:alpha=3", Pareto(3.0)),
        ("uniform", Uniform()),
        ("coxian:p=0.3,r1=2,r2=0.5", Coxian(0.3, 2.0, 0.5)),
        ("hyperexp:p=0.3,r1=3,r2=0.6", HyperExponential(0.3, 3.0, 0.6)),
    ],
)
def test_parse_service(text, expected):
    d = parse_service(text)
    assert d == expected
    assert parse_service(d.spec) == d


@pytest.mark.parametrize(
    "text",
    ["", "gamma", "pareto:alpha=1", "pareto:alpha=0.5", "lognormal", "lognormal:sigma=-1",
     "weibull:k=abc", "deterministic", "exp:rate=2", "coxian:p=2,r1=1,r2=1"],
)
def test_parse_service_rejects(text):
    with pytest.raises(ConfigError):
        parse_service(text)
