import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manyserver.arrivals import ArrivalModel, FluidArrival, RateCurve, parse_arrival
from manyserver.dist import Exponential, Lognormal
from manyserver.errors import ConfigError, DomainError


def test_deterministic_spacing():
    m = ArrivalModel.deterministic(1.0)
    assert m.next_arrival(10, 0.0, np.random.default_rng(0)) == pytest.approx(0.1)


def test_poisson_interarrival_mean():
    m = ArrivalModel.poisson(2.0)
    rng = np.random.default_rng(1)
    now, gaps = 0.0, []
    for _ in range(10_000):
        nxt = m.next_arrival(100, now, rng)
        gaps.append(nxt - now)
        now = nxt
    assert 0.0048 <= np.mean(gaps) <= 0.0052


def test_zero_rate_gives_infinity():
    rng = np.random.default_rng(0)
    assert ArrivalModel.poisson(0.0).next_arrival(10, 0.0, rng) == math.inf
    assert ArrivalModel.deterministic(0.0).next_arrival(10, 0.0, rng) == math.inf
    off = ArrivalModel.poisson(RateCurve((0.0, 1.0), (3.0, 0.0)))
    assert off.next_arrival(10, 1.0, rng) == math.inf


def test_thinning_skips_silent_pieces():
    curve = RateCurve((0.0, 1.0, 2.0), (0.0, 0.0, 5.0))
    rng = np.random.default_rng(3)
    t = ArrivalModel.poisson(curve).next_arrival(10, 0.0, rng)
    assert t > 2.0


def test_inhomogeneous_counts_match_integral():
    curve = RateCurve((0.0, 1.0, 2.0), (1.0, 3.0, 0.5), "linear")
    m = ArrivalModel.poisson(curve)
    rng = np.random.default_rng(4)
    N, T = 200, 3.0
    counts = []
    for _ in range(200):
        t, c = 0.0, 0
        while True:
            t = m.next_arrival(N, t, rng)
            if t > T:
                break
            c += 1
        counts.append(c / N)
    assert np.mean(counts) == pytest.approx(curve.cumulative(T), abs=0.01)


def test_renewal_arrivals_rate():
    m = ArrivalModel.renewal(Lognormal(0.5), 2.0)
    rng = np.random.default_rng(5)
    t, n = 0.0, 0
    while t < 50.0:
        t = m.next_arrival(20, t, rng)
        n += 1
    assert n / (20 * 50.0) == pytest.approx(2.0, rel=0.03)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["poisson", "deterministic", "renewal"]), st.floats(0.01, 5.0),
       st.integers(1, 500), st.floats(0.0, 100.0), st.integers(0, 2**32 - 1))
def test_next_arrival_strictly_later(kind, rate, N, now, seed):
    model = {
        "poisson": ArrivalModel.poisson(rate),
        "deterministic": ArrivalModel.deterministic(rate),
        "renewal": ArrivalModel.renewal(Exponential(), rate),
    }[kind]
    assert model.next_arrival(N, now, np.random.default_rng(seed)) > now


def test_negative_now_rejected():
    with pytest.raises(DomainError):
        ArrivalModel.poisson(1.0).next_arrival(1, -1.0, np.random.default_rng(0))


def test_fluid_cumulative_examples():
    assert FluidArrival.constant(2.0).cumulative(3.0) == 6.0
    fa = FluidArrival(RateCurve((0.0, 1.0), (1.0, 3.0)))
    assert fa.cumulative(2.0) == pytest.approx(4.0)
    assert fa.cumulative(0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=6), st.sampled_from(["step", "linear"]),
       st.lists(st.floats(0, 20), min_size=2, max_size=8))
def test_fluid_cumulative_nondecreasing(vals, interp, ts):
    times = tuple(float(i) for i in range(len(vals)))
    curve = RateCurve(times, tuple(vals), interp)
    ts = np.sort(ts)
    E = curve.cumulative(ts)
    assert np.all(np.diff(E) >= -1e-12)
    assert curve.cumulative(0.0) == 0.0
    # exactness against fine trapezoid
    t = float(ts[-1])
    fine = np.linspace(0, t, 20001)
    if interp == "linear" or len(vals) == 1:
        assert E[-1] == pytest.approx(np.trapezoid(curve(fine), fine), abs=1e-6)


def test_parse_arrival():
    assert parse_arrival("poisson:lambda=0.5").rate.tail == 0.5
    pw = parse_arrival("poisson:lambda=piecewise(0:1,1:3)")
    assert pw.fluid().cumulative(2.0) == pytest.approx(4.0)
    lin = parse_arrival("poisson:lambda=linear(0:0,2:2)")
    assert lin.fluid().cumulative(2.0) == pytest.approx(2.0)
    r = parse_arrival("renewal:lognormal:sigma=0.5:lambda=1.5")
    assert r.kind == "renewal" and r.interarrival == Lognormal(0.5) and r.rate.tail == 1.5
    d = parse_arrival("deterministic:lambda=2")
    assert parse_arrival(d.spec()) == d
    assert parse_arrival(pw.spec()) == pw


@pytest.mark.parametrize("text", ["", "poisson", "poisson:rate=1", "batch:lambda=1",
                                  "poisson:lambda=-1", "poisson:lambda=piecewise(1:2)",
                                  "renewal:exp", "deterministic:lambda=piecewise(0:1,1:2)"])
def test_parse_arrival_rejects(text):
    with pytest.raises(ConfigError):
        parse_arrival(text)


def test_scaled_arrivals_converge():
    """Functional LLN for the arrival counts: larger N tracks lambda t more closely."""
    m = ArrivalModel.poisson(1.0)
    T = 5.0

    def sup_err(N, seed):
        rng = np.random.default_rng(seed)
        t, times = 0.0, []
        while True:
            t = m.next_arrival(N, t, rng)
            if t > T:
                break
            times.append(t)
        times = np.asarray(times)
        k = np.arange(1, times.size + 1) / N
        # sup of |E/N - t| is attained just before or at a jump
        return max(np.max(np.abs(k - times), initial=0), np.max(np.abs(k - 1 / N - times), initial=0),
                   abs(times.size / N - T))

    small = np.mean([sup_err(25, s) for s in range(20)])
    large = np.mean([sup_err(400, 100 + s) for s in range(20)])
    assert large < small
