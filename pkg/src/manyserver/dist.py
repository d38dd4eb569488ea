"""Unit-mean service-time distributions.

Every family is parameterised by shape only; the scale is fixed at construction
so that the mean service requirement is exactly one. Each distribution exposes
its survival function in log form so that survival ratios
``(1 - G(x + t)) / (1 - G(x))`` can be formed without cancellation near the
support endpoint.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError

__all__ = [
    "Evaluation",
    "ServiceDistribution",
    "Exponential",
    "Lognormal",
    "Weibull",
    "Pareto",
    "Uniform",
    "Coxian",
    "HyperExponential",
    "EquilibriumMeasure",
    "parse_service",
]


class Evaluation(NamedTuple):
    cdf: float
    pdf: float
    hazard: float
    beyond_support: bool


def _arr(x):
    return np.asarray(x, dtype=float)


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


class ServiceDistribution:
    """Base class. Subclasses implement the ``_logsf``, ``_logpdf`` and ``_eq_sf`` kernels."""

    kind = "abstract"
    support_end = math.inf
    hazard_continuous = True
    mean = 1.0

    # -- kernels (x >= 0, numpy arrays) --
    def _logsf(self, x):
        raise NotImplementedError

    def _logpdf(self, x):
        raise NotImplementedError

    def _eq_sf(self, x):
        """Integral of the survival function over [x, inf)."""
        raise NotImplementedError

    def _sample(self, rng, size):
        raise NotImplementedError

    def _sample_residual(self, age, rng, size):
        # inverse of the conditional survival function
        u = rng.random(size)
        return self._isf_log(self._logsf(_arr(age)) + np.log1p(-u)) - age

    def _isf_log(self, logq):
        raise NotImplementedError

    @property
    def spec(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec!r})"

    def __eq__(self, other):
        return isinstance(other, ServiceDistribution) and self.spec == other.spec

    def __hash__(self):
        return hash(self.spec)

    # -- public evaluation --
    def _check(self, x):
        x = _arr(x)
        if np.any(x < 0) or np.any(np.isnan(x)):
            raise DomainError("argument must be nonnegative")
        return x

    def logsf(self, x):
        x = self._check(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x >= self.support_end, -np.inf, self._logsf(np.minimum(x, self._cap(x))))
        return _scalar_or_array(x, out)

    def _cap(self, x):
        return x if math.isinf(self.support_end) else self.support_end

    def sf(self, x):
        return _scalar_or_array(x, np.exp(self.logsf(x)))

    def cdf(self, x):
        return _scalar_or_array(x, -np.expm1(self.logsf(x)))

    def logpdf(self, x):
        x = self._check(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x >= self.support_end, -np.inf, self._logpdf(np.minimum(x, self._cap(x))))
        return _scalar_or_array(x, out)

    def pdf(self, x):
        return _scalar_or_array(x, np.exp(self.logpdf(x)))

    def hazard(self, x):
        """g/(1 - G); +inf at or beyond the support endpoint."""
        x = self._check(x)
        with np.errstate(over="ignore"):
            out = np.where(x >= self.support_end, np.inf, np.exp(self.logpdf(x) - self.logsf(np.minimum(x, self._below_end()))))
        return _scalar_or_array(x, out)

    def _below_end(self):
        return np.inf if math.isinf(self.support_end) else np.nextafter(self.support_end, 0.0)

    def cumulative_hazard(self, x):
        """Integral of the hazard over [0, x], i.e. ``-log(1 - G(x))``."""
        return _scalar_or_array(x, -self.logsf(x))

    def hazard_integral(self, a, b):
        """Integral of the hazard over [a, b] for 0 <= a <= b < M."""
        out = np.asarray(self.logsf(a)) - np.asarray(self.logsf(b))
        return float(out) if out.ndim == 0 else out

    def evaluate(self, x: float) -> Evaluation:
        x = float(self._check(x))
        if x >= self.support_end:
            return Evaluation(1.0, 0.0, math.inf, True)
        return Evaluation(self.cdf(x), self.pdf(x), self.hazard(x), False)

    # -- equilibrium law, density 1 - G --
    def equilibrium_sf(self, a):
        a = self._check(a)
        out = np.where(a >= self.support_end, 0.0, self._eq_sf(np.minimum(a, self._cap(a))))
        return _scalar_or_array(a, np.clip(out, 0.0, 1.0))

    def equilibrium_cdf(self, a):
        """Integral of 1 - G over [0, a]; tends to one because the mean is one."""
        return _scalar_or_array(a, 1.0 - self.equilibrium_sf(a))

    def mean_residual_life(self, x):
        """E[v - x | v > x]; zero at or beyond the support endpoint."""
        x = self._check(x)
        inside = x < self.support_end
        xs = np.where(inside, x, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(inside, self.equilibrium_sf(xs) / self.sf(xs), 0.0)
        return _scalar_or_array(x, out)

    def equilibrium(self) -> "EquilibriumMeasure":
        return EquilibriumMeasure(self)

    # -- renewal function --
    def renewal_grid(self, t: float, step: float = 1e-3):
        """Renewal function on the grid 0, step, ..., >= t.

        Solves U(t) = 1 + int_0^t U(t - s) dG(s) with the trapezoidal rule in
        Stieltjes form, which stays well defined when g is unbounded at 0.
        """
        if t < 0:
            raise DomainError("t must be nonnegative")
        if step <= 0:
            raise ConfigError("step must be positive")
        n = max(int(math.ceil(t / step - 1e-9)), 1)
        grid = step * np.arange(n + 1)
        dG = np.diff(self.cdf(grid))
        # U_n (1 - dG_1/2) = 1 + sum_{m<n} w_{n-m} U_m, lag weights w_L = (dG_L + dG_{L+1})/2
        w = np.zeros(n + 1)
        w[1:n] = 0.5 * (dG[: n - 1] + dG[1:n])
        u = np.empty(n + 1)
        u[0] = 1.0
        denom = 1.0 - 0.5 * dG[0]
        for k in range(1, n + 1):
            acc = 0.5 * dG[k - 1] * u[0]
            if k > 1:
                acc += np.dot(w[1:k][::-1], u[1:k])
            u[k] = (1.0 + acc) / denom
        return grid, u

    def renewal_function(self, t: float, step: float = 1e-3) -> float:
        grid, u = self.renewal_grid(t, step)
        return float(np.interp(t, grid, u))

    # -- sampling --
    def sample(self, rng: np.random.Generator, size=None):
        out = self._sample(rng, size)
        return float(out) if size is None else out

    def sample_residual(self, age: float, rng: np.random.Generator, size=None):
        """Residual requirement r > 0 given the requirement exceeds ``age``."""
        if age < 0:
            raise DomainError("age must be nonnegative")
        if age >= self.support_end:
            raise DomainError(f"age {age} is at or beyond the support endpoint {self.support_end}")
        out = np.asarray(self._sample_residual(float(age), rng, size), dtype=float)
        # a zero residual has probability zero; guard against rounding
        out = np.maximum(out, np.finfo(float).tiny)
        return float(out) if size is None else out


class Exponential(ServiceDistribution):
    kind = "exp"

    def _logsf(self, x):
        return -x

    def _logpdf(self, x):
        return -x

    def _eq_sf(self, x):
        return np.exp(-x)

    def _isf_log(self, logq):
        return -logq

    def _sample(self, rng, size):
        return rng.exponential(1.0, size)

    def _sample_residual(self, age, rng, size):
        return rng.exponential(1.0, size)

    @property
    def spec(self):
        return "exp"


class Lognormal(ServiceDistribution):
    kind = "lognormal"

    def __init__(self, sigma: float):
        if not sigma > 0:
            raise ConfigError("lognormal sigma must be positive")
        self.sigma = float(sigma)
        self.mu = -0.5 * self.sigma**2

    def _z(self, x):
        with np.errstate(divide="ignore"):
            return (np.log(x) - self.mu) / self.sigma

    def _logsf(self, x):
        return special.log_ndtr(-self._z(x))

    def _logpdf(self, x):
        z = self._z(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -0.5 * z**2 - np.log(x * self.sigma * math.sqrt(2 * math.pi))
        return np.where(x > 0, out, -np.inf)

    def _eq_sf(self, x):
        # E[(v - x)^+] = P*(v > x) under the size-biased law minus x P(v > x)
        z = self._z(x)
        return special.ndtr(self.sigma - z) - x * special.ndtr(-z)

    def _isf_log(self, logq):
        return np.exp(self.mu - self.sigma * special.ndtri_exp(logq))

    def _sample(self, rng, size):
        return rng.lognormal(self.mu, self.sigma, size)

    @property
    def spec(self):
        return f"lognormal:sigma={self.sigma!r}"


class Weibull(ServiceDistribution):
    kind = "weibull"

    def __init__(self, k: float):
        if not k > 0:
            raise ConfigError("weibull k must be positive")
        self.k = float(k)
        self.scale = 1.0 / math.gamma(1.0 + 1.0 / self.k)
        # h(0) is infinite for k < 1
        self.hazard_continuous = self.k >= 1.0

    def _logsf(self, x):
        return -((x / self.scale) ** self.k)

    def _logpdf(self, x):
        y = x / self.scale
        with np.errstate(divide="ignore"):
            return math.log(self.k / self.scale) + (self.k - 1) * np.log(y) - y**self.k

    def _eq_sf(self, x):
        return special.gammaincc(1.0 / self.k, (x / self.scale) ** self.k)

    def _isf_log(self, logq):
        return self.scale * (-logq) ** (1.0 / self.k)

    def _sample(self, rng, size):
        return self.scale * rng.weibull(self.k, size)

    @property
    def spec(self):
        return f"weibull:k={self.k!r}"


class Pareto(ServiceDistribution):
    """Pareto type II (Lomax): 1 - G(x) = (1 + x/s)^-alpha with s = alpha - 1."""

    kind = "pareto"

    def __init__(self, alpha: float):
        if not alpha > 1:
            raise ConfigError("pareto alpha must exceed 1 for a finite mean")
        self.alpha = float(alpha)
        self.scale = self.alpha - 1.0

    def _logsf(self, x):
        return -self.alpha * np.log1p(x / self.scale)

    def _logpdf(self, x):
        return math.log(self.alpha / self.scale) - (self.alpha + 1) * np.log1p(x / self.scale)

    def _eq_sf(self, x):
        return np.exp((1.0 - self.alpha) * np.log1p(x / self.scale))

    def _isf_log(self, logq):
        return self.scale * np.expm1(-logq / self.alpha)

    def _sample(self, rng, size):
        return self._isf_log(np.log1p(-rng.random(size)))

    @property
    def spec(self):
        return f"pareto:alpha={self.alpha!r}"


class Uniform(ServiceDistribution):
    """Uniform on [0, 2]."""

    kind = "uniform"
    support_end = 2.0

    def _logsf(self, x):
        with np.errstate(divide="ignore"):
            return np.log1p(-0.5 * x)

    def _logpdf(self, x):
        return np.full_like(x, math.log(0.5))

    def _eq_sf(self, x):
        return (1.0 - 0.5 * x) ** 2

    def _isf_log(self, logq):
        return -2.0 * np.expm1(logq)

    def _sample(self, rng, size):
        # open interval (0, 2)
        u = rng.random(size)
        return 2.0 * np.where(u > 0, u, 0.5)

    def _sample_residual(self, age, rng, size):
        u = rng.random(size)
        u = np.where(u > 0, u, 0.5)
        return (2.0 - age) * u

    @property
    def spec(self):
        return "uniform"


class _TwoPhase(ServiceDistribution):
    """Common plumbing for the two closed-form phase-type families."""

    def _phase_weights(self, x):
        raise NotImplementedError

    def _logsf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self._sf_kernel(x))

    def _logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self._pdf_kernel(x))


class Coxian(_TwoPhase):
    """Two-phase Coxian: phase 1 at rate r1, then phase 2 at rate r2 with probability p."""

    kind = "coxian"

    def __init__(self, p: float, r1: float, r2: float):
        if not 0 <= p <= 1:
            raise ConfigError("coxian p must lie in [0, 1]")
        if not (r1 > 0 and r2 > 0):
            raise ConfigError("coxian rates must be positive")
        self.p, self.r1_raw, self.r2_raw = float(p), float(r1), float(r2)
        m = 1.0 / r1 + p / r2
        self.a, self.b = r1 * m, r2 * m
        self._equal = abs(self.a - self.b) <= 1e-9 * self.a

    def _p2(self, x):
        a, b, p = self.a, self.b, self.p
        if self._equal:
            return p * a * x * np.exp(-a * x)
        return p * a / (b - a) * (np.exp(-a * x) - np.exp(-b * x))

    def _sf_kernel(self, x):
        return np.exp(-self.a * x) + self._p2(x)

    def _pdf_kernel(self, x):
        return (1 - self.p) * self.a * np.exp(-self.a * x) + self.b * self._p2(x)

    def _eq_sf(self, x):
        a, b, p = self.a, self.b, self.p
        if self._equal:
            return np.exp(-a * x) * (1 / a + p * x + p / a)
        return np.exp(-a * x) / a + p * a / (b - a) * (np.exp(-a * x) / a - np.exp(-b * x) / b)

    def _sample(self, rng, size):
        first = rng.exponential(1.0 / self.a, size)
        second = rng.exponential(1.0 / self.b, size) * (rng.random(size) < self.p)
        return first + second

    def _sample_residual(self, age, rng, size):
        w1 = math.exp(-self.a * age)
        w2 = float(self._p2(np.float64(age)))
        in_first = rng.random(size) * (w1 + w2) < w1
        tail = rng.exponential(1.0 / self.b, size)
        head = rng.exponential(1.0 / self.a, size) + tail * (rng.random(size) < self.p)
        return np.where(in_first, head, tail)

    @property
    def spec(self):
        return f"coxian:p={self.p!r},r1={self.r1_raw!r},r2={self.r2_raw!r}"


class HyperExponential(_TwoPhase):
    """Mixture of two exponentials: rate r1 with probability p, else rate r2."""

    kind = "hyperexp"

    def __init__(self, p: float, r1: float, r2: float):
        if not 0 <= p <= 1:
            raise ConfigError("hyperexp p must lie in [0, 1]")
        if not (r1 > 0 and r2 > 0):
            raise ConfigError("hyperexp rates must be positive")
        self.p, self.r1_raw, self.r2_raw = float(p), float(r1), float(r2)
        m = p / r1 + (1 - p) / r2
        self.a, self.b = r1 * m, r2 * m

    def _sf_kernel(self, x):
        return self.p * np.exp(-self.a * x) + (1 - self.p) * np.exp(-self.b * x)

    def _pdf_kernel(self, x):
        return self.p * self.a * np.exp(-self.a * x) + (1 - self.p) * self.b * np.exp(-self.b * x)

    def _eq_sf(self, x):
        return self.p * np.exp(-self.a * x) / self.a + (1 - self.p) * np.exp(-self.b * x) / self.b

    def _sample(self, rng, size):
        rate = np.where(rng.random(size) < self.p, self.a, self.b)
        return rng.exponential(1.0, size) / rate

    def _sample_residual(self, age, rng, size):
        w1 = self.p * math.exp(-self.a * age)
        w2 = (1 - self.p) * math.exp(-self.b * age)
        rate = np.where(rng.random(size) * (w1 + w2) < w1, self.a, self.b)
        return rng.exponential(1.0, size) / rate

    @property
    def spec(self):
        return f"hyperexp:p={self.p!r},r1={self.r1_raw!r},r2={self.r2_raw!r}"


class EquilibriumMeasure:
    """The probability measure on [0, M) with density 1 - G."""

    def __init__(self, dist: ServiceDistribution):
        self.dist = dist

    def density(self, x):
        return self.dist.sf(x)

    def cdf(self, a):
        return self.dist.equilibrium_cdf(a)

    def sf(self, a):
        return self.dist.equilibrium_sf(a)

    @property
    def mass(self) -> float:
        return 1.0


_FAMILIES = {
    "exp": (Exponential, ()),
    "exponential": (Exponential, ()),
    "uniform": (Uniform, ()),
    "lognormal": (Lognormal, ("sigma",)),
    "weibull": (Weibull, ("k",)),
    "pareto": (Pareto, ("alpha",)),
    "coxian": (Coxian, ("p", "r1", "r2")),
    "hyperexp": (HyperExponential, ("p", "r1", "r2")),
}


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_service(text: str) -> ServiceDistribution:
    """Parse ``exp``, ``lognormal:sigma=1``, ``weibull:k=2``, ``pareto:alpha=3``,
    ``uniform``, ``coxian:p=0.5,r1=2,r2=1`` or ``hyperexp:p=0.5,r1=2,r2=0.5``."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("empty service distribution description")
    name, _, rest = text.strip().partition(":")
    name = name.lower()
    if name not in _FAMILIES:
        raise ConfigError(f"unknown service family {name!r}")
    cls, keys = _FAMILIES[name]
    kv = parse_kv(rest)
    if set(kv) != set(keys):
        raise ConfigError(f"{name} expects parameters {list(keys)}, got {sorted(kv)}")
    try:
        args = [float(kv[k]) for k in keys]
    except ValueError as exc:
        raise ConfigError(f"non-numeric parameter in {text!r}") from exc
    return cls(*args)
