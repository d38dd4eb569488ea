"""Independent reference computations used to freeze expected values.

These use only scipy quadrature, root finding and closed-form survival
functions written out here, not the package's kernels.
"""
import math

import numpy as np
from scipy import integrate, optimize, stats


def exp_sf(x):
    return math.exp(-x)


def lognormal_sf(sigma):
    law = stats.lognorm(s=sigma, scale=math.exp(-sigma**2 / 2))
    return law.sf


def uniform_sf(x):
    return max(0.0, 1.0 - x / 2.0)


def equilibrium_cdf(sf, a, support=math.inf):
    return integrate.quad(sf, 0.0, min(a, support), limit=200)[0]


def renewal_function_exp(t):
    # renewal measure of a rate-one Poisson process with a renewal at 0
    return 1.0 + t


def renewal_function_uniform(t):
    """U(t) for the uniform law on [0, 2], t <= 2: solves U' = U/2 with U(0) = 1."""
    return math.exp(t / 2.0)


def fluid_head_count_start_empty(sf, rate, t):
    return integrate.quad(lambda s: sf(t - s) * rate, 0.0, t, limit=200)[0]


def fill_time(sf, rate, hi=50.0):
    f = lambda t: fluid_head_count_start_empty(sf, rate, t) - 1.0  # noqa: E731
    return optimize.brentq(f, 1e-9, hi, xtol=1e-13)


def equilibrium_departure_rate(pdf, t, upper=np.inf):
    return integrate.quad(lambda x: pdf(x + t), 0.0, upper, limit=400)[0]


def equilibrium_workload(sf):
    """int S(x) m(x) dx with m the mean residual life, as a double integral."""
    inner = lambda x: integrate.quad(sf, x, np.inf, limit=200)[0]  # noqa: E731
    return integrate.quad(inner, 0.0, np.inf, limit=200)[0]


def equilibrium_residual_cdf(pdf, sf, a):
    """int S(x) * (int_0^a g(x+u)/S(x) du) dx = int int_0^a g(x+u) du dx."""
    return integrate.dblquad(lambda u, x: pdf(x + u), 0.0, np.inf, 0.0, a)[0]
