"""Fluid (law-of-large-numbers) model of the many-server queue.

The whole age profile is carried by one scalar path, the entry rate kappa.
For a test function f the in-service mass at time t is

    <f, nu_t> = int f(x + t) S(x + t) / S(x) nu_0(dx) + int_0^t f(t - s) S(t - s) kappa(s) ds

with S = 1 - G, and the departure rate is

    d(t) = int g(x + t) / S(x) nu_0(dx) + int_0^t g(t - s) kappa(s) ds.

``solve`` marches kappa on a uniform grid. While nobody waits and capacity is
free, kappa follows the arrival rate; once capacity binds with a queue, kappa
replaces departures, which gives a second-kind Volterra equation that is
stepped implicitly with product-integration weights for g.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, signal

from .arrivals import FluidArrival, RateCurve
from .dist import ServiceDistribution
from .errors import ConfigError, DomainError, InvariantError, PreconditionError

__all__ = [
    "InitialMeasure",
    "FluidInput",
    "EntryPolicy",
    "FluidSolution",
    "initial_survival_integral",
    "initial_departure_rate",
    "solve",
    "tau1",
    "cumulative_load",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_MASS_TOL = 1e-9
_MASS_PULL = 0.5


def _gauss_nodes(breaks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    x = (a + b) * 0.5 + half * _GL_X
    w = half * _GL_W
    return x.ravel(), w.ravel()


def _panel_breaks(upper: float, first: float = 0.05, growth: float = 1.2) -> np.ndarray:
    """Panel endpoints on [0, upper], fine near 0 and geometrically coarser."""
    pts = [0.0]
    w = first
    while pts[-1] + w < upper:
        pts.append(pts[-1] + w)
        w *= growth
    if upper - pts[-1] < 0.25 * w and len(pts) > 1:
        pts[-1] = upper
    else:
        pts.append(upper)
    return np.asarray(pts)


class InitialMeasure:
    """Sub-probability age measure at time zero.

    Either a density on ``[0, upper)`` (integrated by composite Gauss-Legendre
    on graded panels, rescaled to the stated mass) or a finite list of atoms.
    """

    def __init__(self, kind: str, *, density: Callable | None = None, upper: float = 0.0,
                 ages=(), weights=(), mass: float | None = None, label: str = ""):
        self.kind = kind
        self.label = label
        if kind == "density":
            if not (upper > 0):
                raise ConfigError("density support must have positive length")
            self.density = density
            self.upper = float(upper)
            self.breaks = _panel_breaks(self.upper)
            x, w = _gauss_nodes(self.breaks)
            p = np.asarray(density(x), dtype=float)
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                raise ConfigError("initial density must be finite and nonnegative")
            raw = float(np.dot(w, p))
            self.scale = 1.0 if mass is None or raw == 0 else mass / raw
            self.nodes, self.weights = x, w * p * self.scale
        elif kind == "atoms":
            ages = np.asarray(ages, dtype=float).ravel()
            weights = np.asarray(weights, dtype=float).ravel()
            if ages.size != weights.size:
                raise ConfigError("atoms need matching ages and weights")
            if np.any(ages < 0) or np.any(weights < 0):
                raise ConfigError("atom ages and weights must be nonnegative")
            order = np.argsort(ages, kind="stable")
            self.nodes, self.weights = ages[order], weights[order]
            self.upper = float(self.nodes.max()) if self.nodes.size else 0.0
            self.density, self.scale, self.breaks = None, 1.0, None
        else:
            raise ConfigError(f"unknown initial measure kind {kind!r}")
        m = float(self.weights.sum())
        if m > 1 + _MASS_TOL:
            raise ConfigError(f"initial measure mass {m} exceeds 1")

    # -- constructors --
    @classmethod
    def empty(cls) -> "InitialMeasure":
        return cls("atoms", label="empty")

    @classmethod
    def atoms(cls, ages, weights) -> "InitialMeasure":
        return cls("atoms", ages=ages, weights=weights, label="atoms")

    @classmethod
    def from_density(cls, density: Callable, upper: float, mass: float | None = None) -> "InitialMeasure":
        return cls("density", density=density, upper=upper, mass=mass, label="density")

    @classmethod
    def from_grid(cls, values, step: float, mass: float | None = None) -> "InitialMeasure":
        """Density given by its values on the age grid 0, step, 2 step, ... (linear in between)."""
        values = np.asarray(values, dtype=float)
        grid = step * np.arange(values.size)
        return cls("density", density=lambda x: np.interp(x, grid, values, right=0.0),
                   upper=float(grid[-1]), mass=mass, label="grid")

    @classmethod
    def equilibrium(cls, dist: ServiceDistribution, mass: float = 1.0, tail: float = 1e-10) -> "InitialMeasure":
        """``mass`` times the equilibrium law of ``dist`` (density 1 - G)."""
        if not 0 <= mass <= 1:
            raise ConfigError("mass must lie in [0, 1]")
        if mass == 0:
            return cls.empty()
        upper = dist.support_end
        if math.isinf(upper):
            upper = 1.0
            while dist.equilibrium_sf(upper) > tail:
                upper *= 2.0
            upper = optimize.brentq(lambda a: dist.equilibrium_sf(a) - tail, upper / 2, upper)
        return cls("density", density=dist.sf, upper=upper, mass=mass, label="equilibrium")

    # -- queries --
    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_empty(self) -> bool:
        return self.mass == 0.0

    def integrate(self, f, upper: float = math.inf) -> float:
        """``int f dnu_0`` over ages in ``[0, upper]``."""
        return float(self.integrate_below(f, upper)[0])

    def integrate_below(self, f, uppers) -> np.ndarray:
        """``int_[0, u] f dnu_0`` for every u in ``uppers`` (vectorised)."""
        u = np.atleast_1d(np.asarray(uppers, dtype=float))
        if self.nodes.size == 0:
            return np.zeros(u.size)
        if self.kind == "atoms":
            vals = self.weights * f(self.nodes)
            cum = np.concatenate(([0.0], np.cumsum(vals)))
            return cum[np.searchsorted(self.nodes, u, side="right")]
        vals = self.weights * f(self.nodes)
        per_panel = vals.reshape(-1, _GL_X.size).sum(axis=1)
        cum = np.concatenate(([0.0], np.cumsum(per_panel)))
        uc = np.clip(u, 0.0, self.upper)
        j = np.clip(np.searchsorted(self.breaks, uc, side="right") - 1, 0, per_panel.size - 1)
        a = self.breaks[j]
        half = 0.5 * (uc - a)
        x = (a + half)[:, None] + half[:, None] * _GL_X[None, :]
        part = (half[:, None] * _GL_W[None, :] * self.scale * self.density(x) * f(x)).sum(axis=1)
        out = cum[j] + part
        return np.where(u >= self.upper, cum[-1], np.where(u <= 0, 0.0, out))

    def cdf(self, a) -> np.ndarray | float:
        out = self.integrate_below(np.ones_like, a)
        return float(out[0]) if np.ndim(a) == 0 else out

    def sample_ages(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """i.i.d. draws from the normalised measure."""
        if n == 0:
            return np.empty(0)
        if self.is_empty:
            raise ConfigError("cannot sample from an empty measure")
        if self.kind == "atoms":
            return rng.choice(self.nodes, size=n, p=self.weights / self.weights.sum())
        sub = np.linspace(0.0, 1.0, 65)
        grid = (self.breaks[:-1, None] + np.diff(self.breaks)[:, None] * sub[None, :-1]).ravel()
        grid = np.append(grid, self.upper)
        dens = np.asarray(self.density(grid), dtype=float)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))))
        u = rng.random(n) * cum[-1]
        ages = np.interp(u, cum, grid)
        return np.minimum(ages, np.nextafter(self.upper, 0.0))

    def check_support(self, dist: ServiceDistribution) -> None:
        if self.nodes.size and self.nodes.max() >= dist.support_end:
            raise ConfigError(f"initial ages must lie below the support endpoint {dist.support_end}")


def _ratio_matrix(dist, x, t, log_num):
    """exp(log_num(x + t) - logsf(x)) for nodes x (columns) and times t (rows)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.exp(log_num(x[None, :] + t[:, None]) - dist.logsf(x)[None, :])
    return np.nan_to_num(out, nan=0.0, posinf=0.0)


def _initial_terms(nu0: InitialMeasure, dist: ServiceDistribution, t, *, departure=False, f=None,
                   cells: int = 4_000_000):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    out = np.zeros(t.size)
    x, w = nu0.nodes, nu0.weights
    if x.size == 0:
        return out
    log_num = dist.logpdf if departure else dist.logsf
    step = max(1, cells // x.size)
    for c in range(0, t.size, step):
        tt = t[c : c + step]
        r = _ratio_matrix(dist, x, tt, log_num)
        if f is not None:
            r = r * f(x[None, :] + tt[:, None])
        out[c : c + step] = r @ w
    return out


def initial_survival_integral(nu0: InitialMeasure, dist: ServiceDistribution, t, f=None):
    """``int f(x + t) S(x + t) / S(x) nu_0(dx)``; f defaults to 1."""
    out = _initial_terms(nu0, dist, t, f=f)
    return float(out[0]) if np.ndim(t) == 0 else out


def initial_departure_rate(nu0: InitialMeasure, dist: ServiceDistribution, t):
    """``int g(x + t) / S(x) nu_0(dx)``, the departure rate of the initial cohort."""
    out = _initial_terms(nu0, dist, t, departure=True)
    return float(out[0]) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class FluidInput:
    """Arrival function, initial head-count and initial age measure.

    ``residual`` is an optional alternate law whose survival ratios replace
    those of the service law for the initial cohort only.
    """

    arrival: FluidArrival
    x0: float
    nu0: InitialMeasure = field(default_factory=InitialMeasure.empty)
    residual: ServiceDistribution | None = None

    def __post_init__(self):
        if not (self.x0 >= 0 and math.isfinite(self.x0)):
            raise ConfigError("x0 must be finite and nonnegative")
        gap = abs((1.0 - self.nu0.mass) - max(1.0 - self.x0, 0.0))
        if gap > _MASS_TOL:
            raise ConfigError(
                f"initial state violates non-idling: 1 - <1,nu0> = {1 - self.nu0.mass!r} "
                f"but (1 - x0)^+ = {max(1 - self.x0, 0.0)!r}"
            )

    def validate_for(self, dist: ServiceDistribution) -> None:
        law = self.residual or dist
        self.nu0.check_support(law)
        if self.nu0.kind == "atoms" and not self.nu0.is_empty and not law.hazard_continuous:
            raise ConfigError("atoms in the initial measure require a continuous hazard rate")

    @property
    def queue0(self) -> float:
        return max(self.x0 - 1.0, 0.0)

    @classmethod
    def start_empty(cls, rate: float | RateCurve) -> "FluidInput":
        curve = rate if isinstance(rate, RateCurve) else RateCurve.constant(rate)
        return cls(FluidArrival(curve), 0.0, InitialMeasure.empty())


@dataclass(frozen=True)
class EntryPolicy:
    """How fluid enters service.

    ``non_idling`` is the default rule. ``capped`` enters at the smaller of the
    cap and the non-idling rate. ``prescribed`` enters at exactly the given
    rate and fails if that would overfill capacity or drain a nonexistent queue.
    """

    kind: str = "non_idling"
    rate: Callable | float | None = None

    def __post_init__(self):
        if self.kind not in ("non_idling", "capped", "prescribed"):
            raise ConfigError(f"unknown entry policy {self.kind!r}")
        if self.kind != "non_idling" and self.rate is None:
            raise ConfigError(f"{self.kind} policy needs a rate")

    @classmethod
    def capped(cls, rate) -> "EntryPolicy":
        return cls("capped", rate)

    @classmethod
    def prescribed(cls, rate) -> "EntryPolicy":
        return cls("prescribed", rate)

    def rates(self, t: np.ndarray) -> np.ndarray:
        if self.rate is None:
            return np.full(t.shape, np.inf)
        if callable(self.rate):
            return np.broadcast_to(np.asarray(self.rate(t), dtype=float), t.shape).copy()
        return np.full(t.shape, float(self.rate))


def _product_weights(dist: ServiceDistribution, n: int, dt: float):
    """Weights of int_a^b g(u) (u - a)/dt du and int_a^b g(u) (b - u)/dt du on cells [c dt, (c+1) dt]."""
    grid = dt * np.arange(n + 2)
    S = dist.sf(grid)
    Q = dist.equilibrium_sf(grid)
    # int_a^b (S(u) - S(b)) du, formed from differences of the tail integral
    I1 = (Q[:-1] - Q[1:]) - dt * S[1:]
    I1 = np.maximum(I1, 0.0)
    rise = I1 / dt
    fall = np.maximum((S[:-1] - S[1:]) - rise, 0.0)
    return rise, fall


class FluidSolution:
    """Grid solution of the fluid equations with measure functionals."""

    def __init__(self, inp: FluidInput, dist: ServiceDistribution, policy: EntryPolicy,
                 t, kappa, K, X, D, mass, d, E, lam, Q):
        self.input, self.dist, self.policy = inp, dist, policy
        self.t, self.kappa, self.K, self.X, self.D = t, kappa, K, X, D
        self.mass, self.d, self.E, self.lam, self.Q = mass, d, E, lam, Q
        self.dt = float(t[1] - t[0])
        self.T = float(t[-1])
        self._S = dist.sf(t)

    @property
    def initial_law(self) -> ServiceDistribution:
        return self.input.residual or self.dist

    @property
    def tol(self) -> float:
        return 5.0 * self.dt

    # -- measure reconstruction --
    def _locate(self, t: float):
        if t < 0 or t > self.T * (1 + 1e-12):
            raise DomainError(f"t = {t} outside [0, {self.T}]")
        pos = min(t / self.dt, self.t.size - 1.0)
        k = int(math.floor(pos + 1e-9))
        frac = pos - k
        if frac < 1e-9 or k >= self.t.size - 1:
            return min(k, self.t.size - 1), 0.0
        return k, frac

    def _entry_integral_at(self, k: int, f) -> float:
        if k == 0:
            return 0.0
        lags = self.t[k] - self.t[: k + 1]
        y = self._S[k::-1] * self.kappa[: k + 1]
        if f is not None:
            y = y * f(lags)
        return self.dt * (y.sum() - 0.5 * (y[0] + y[-1]))

    def _measure_at(self, k: int, f, f_initial=None) -> float:
        fi = f if f_initial is None else f_initial
        init = _initial_terms(self.input.nu0, self.initial_law, self.t[k], f=fi)[0]
        return init + self._entry_integral_at(k, f)

    def eval_measure(self, t: float, f=None, f_initial=None) -> float:
        """``<f, nu_t>``; f acts on ages and defaults to 1. Linear in t between grid points."""
        k, frac = self._locate(float(t))
        v = self._measure_at(k, f, f_initial)
        if frac:
            v = (1 - frac) * v + frac * self._measure_at(k + 1, f, f_initial)
        return float(v)

    def _cdf_at(self, k: int, a: np.ndarray) -> np.ndarray:
        t = self.t[k]
        nu0, law = self.input.nu0, self.initial_law
        ratio = lambda x: np.exp(law.logsf(x + t) - law.logsf(x))  # noqa: E731
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.where(a >= t, nu0.integrate_below(ratio, np.maximum(a - t, -1.0)), 0.0)
        out = np.nan_to_num(out)
        if k > 0:
            y = self._S[k::-1] * self.kappa[: k + 1]  # integrand over s = t_0 .. t_k
            cum = np.concatenate(([0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * self.dt)))
            total = cum[-1]
            lo = np.clip(t - a, 0.0, t)  # integrate over s in [lo, t]
            pos = lo / self.dt
            j = np.minimum(np.floor(pos).astype(int), k - 1)
            fr = pos - j
            y_lo = (1 - fr) * y[j] + fr * y[j + 1]
            below = cum[j] + 0.5 * (y[j] + y_lo) * fr * self.dt
            out += total - below
        return out

    def measure_cdf(self, t: float, a):
        """``nu_t([0, a])``, vectorised over a."""
        a_arr = np.atleast_1d(np.asarray(a, dtype=float))
        k, frac = self._locate(float(t))
        v = self._cdf_at(k, a_arr)
        if frac:
            v = (1 - frac) * v + frac * self._cdf_at(k + 1, a_arr)
        return float(v[0]) if np.ndim(a) == 0 else v

    def equilibrium_distance(self, t: float, points: int = 4001) -> float:
        """Sup over a of |nu_t([0, a]) - int_0^a (1 - G)|, on a fine grid of a."""
        hi = self.dist.support_end
        if math.isinf(hi):
            hi = max(t + self.input.nu0.upper, 1.0)
            while self.dist.equilibrium_sf(hi) > 1e-8:
                hi *= 1.5
        a = np.linspace(0.0, hi, points)
        return float(np.max(np.abs(self.measure_cdf(t, a) - self.dist.equilibrium_cdf(a))))

    # -- functionals --
    def _inverse(self, path: np.ndarray, level: float, name: str, theta_min: float) -> float:
        slope = np.diff(path) / self.dt
        bad = np.flatnonzero(slope < theta_min)
        if bad.size:
            a, b = self.t[bad[0]], self.t[bad[-1] + 1]
            raise PreconditionError(
                f"{name} is not uniformly strictly increasing: slope below {theta_min} on [{float(a)!r}, {float(b)!r}]"
            )
        if level > path[-1] + 1e-12:
            return math.inf
        return float(np.interp(level, path, self.t))

    def _check_arrivals(self, theta_min):
        slope = np.diff(self.E) / self.dt
        bad = np.flatnonzero(slope < theta_min)
        if bad.size:
            raise PreconditionError(
                f"arrival function is not uniformly strictly increasing: flat on [{float(self.t[bad[0]])!r}, {float(self.t[bad[-1] + 1])!r}]"
            )

    def waiting_time(self, t: float, theta_min: float = 1e-6) -> float:
        """Fluid wait of mass arriving at t; ``inf`` when it has not entered service by T."""
        self._check_arrivals(theta_min)
        e = self.input.queue0 + self.input.arrival.cumulative(float(t))
        return self._inverse(self.K, e, "K", theta_min) - float(t)

    def sojourn_time(self, t: float, theta_min: float = 1e-6) -> float:
        """Fluid sojourn of mass arriving at t; ``inf`` when it has not departed by T."""
        self._check_arrivals(theta_min)
        e = self.input.x0 + self.input.arrival.cumulative(float(t))
        return self._inverse(self.D, e, "D", theta_min) - float(t)

    def workload(self, t: float) -> float:
        """Residual work in service plus the queue at unit mean requirement."""
        k, frac = self._locate(float(t))
        x = self.X[k] if not frac else (1 - frac) * self.X[k] + frac * self.X[k + 1]
        busy = self.eval_measure(t, self.dist.mean_residual_life, self.initial_law.mean_residual_life)
        return busy + max(x - 1.0, 0.0)

    def residual_measure_integral(self, t: float, f, support: float) -> float:
        """``<f, eta_t>``: f integrated against the residual service times of mass in service.

        ``f`` must vanish outside ``[0, support]``.
        """
        breaks = _panel_breaks(float(support), first=min(0.05, support / 4))
        u, wu = _gauss_nodes(breaks)
        fu = np.asarray(f(u), dtype=float) * wu

        def inner(law):
            def phi(x):
                x = np.asarray(x, dtype=float)
                flat = x.ravel()
                vals = _ratio_matrix(law, flat, u, law.logpdf)  # rows: u, columns: x
                return (fu @ vals).reshape(x.shape)
            return phi

        return self.eval_measure(t, inner(self.dist), inner(self.initial_law))

    def residual_measure_cdf(self, t: float, a: float) -> float:
        """Mass in service at t whose residual requirement is at most a."""
        def prob(law):
            return lambda x: 1.0 - _ratio_matrix(law, np.ravel(x), np.array([a]), law.logsf)[0].reshape(np.shape(x))
        return self.eval_measure(t, prob(self.dist), prob(self.initial_law))

    def volterra_residual(self) -> float:
        """Sup over the grid of the defect in the implicit equation for K.

        ``K(t) = <1,nu_t> - <1,nu_0> + int (G(x+t) - G(x))/S(x) nu_0(dx) + int_0^t g(t - s) K(s) ds``
        with the last term integrated by product rule for piecewise-linear K.
        """
        n = self.t.size - 1
        rise, fall = _product_weights(self.dist, n, self.dt)
        inner = np.append(fall[: n + 1], 0.0)[: n + 1]
        inner[1:] += rise[:n]
        conv = signal.fftconvolve(inner, self.K)[: n + 1]
        conv -= fall[: n + 1] * self.K[0]
        m0 = self.input.nu0.mass
        surv0 = initial_survival_integral(self.input.nu0, self.initial_law, self.t)
        rhs = self.mass - m0 + (m0 - surv0) + conv
        return float(np.max(np.abs(self.K - rhs)))

    def check_invariants(self, tol: float | None = None) -> None:
        tol = self.tol if tol is None else tol
        inp = self.input
        if np.any(np.diff(self.K) < -tol) or np.any(np.diff(self.D) < -tol):
            raise InvariantError("K or D decreases")
        if abs(self.D[0]) > tol:
            raise InvariantError("D(0) is not zero")
        if np.any(self.mass < -tol) or np.any(self.mass > 1 + tol):
            raise InvariantError("in-service mass outside [0, 1]")
        if np.max(np.abs((1 - self.mass) - np.maximum(1 - self.X, 0.0))) > tol:
            raise InvariantError("non-idling violated")
        if np.max(np.abs(self.X - (inp.x0 + self.E - self.D))) > tol:
            raise InvariantError("mass balance violated")
        if np.max(np.abs(self.K - (self.mass - inp.nu0.mass + self.D))) > tol:
            raise InvariantError("entry identity violated")
        if not np.all(np.isfinite(self.D)):
            raise InvariantError("departures not finite")

    # -- export --
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "kappa", "K", "X", "D", "nu_mass"])
        for row in zip(self.t, self.kappa, self.K, self.X, self.D, self.mass):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def cdf_snapshots_csv(self, times, ages) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "a", "cdf"])
        ages = np.asarray(ages, dtype=float)
        for t in times:
            for a, v in zip(ages, self.measure_cdf(float(t), ages)):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(v))])
        return buf.getvalue()


def solve(inp: FluidInput, dist: ServiceDistribution, T: float, dt: float = 1e-3,
          policy: EntryPolicy | None = None) -> FluidSolution:
    """Solve the fluid equations on [0, T] with step ``dt``."""
    policy = policy or EntryPolicy()
    if not (T > 0 and math.isfinite(T)):
        raise ConfigError("T must be positive and finite")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if dt >= T:
        raise ConfigError("dt must be smaller than T")
    inp.validate_for(dist)
    n = int(round(T / dt))
    dt = T / n
    t = dt * np.arange(n + 1)
    law0 = inp.residual or dist
    nu0 = inp.nu0
    m0 = nu0.mass
    q0 = inp.queue0

    E = np.asarray(inp.arrival.cumulative(t), dtype=float)
    lam = np.asarray(inp.arrival.density(t), dtype=float)
    cap = policy.rates(t)
    surv0 = initial_survival_integral(nu0, law0, t)
    dep0 = initial_departure_rate(nu0, law0, t)
    S = dist.sf(t)
    rise, fall = _product_weights(dist, n, dt)
    # coefficient of kappa_i at lag L = k - i for interior i (endpoint i = 0 handled separately)
    W = np.zeros(n + 1)
    W[:n] = fall[:n]
    W[1:] += rise[:n]
    Wr = W[::-1].copy()
    Sr = S[::-1].copy()
    w0 = W[0]

    kappa = np.zeros(n + 1)
    K = np.zeros(n + 1)
    B = np.zeros(n + 1)
    d = np.zeros(n + 1)
    Q = np.zeros(n + 1)
    Q[0] = q0
    mass = np.zeros(n + 1)
    mass[0] = m0
    prescribed = policy.kind == "prescribed"
    capped = policy.kind != "non_idling" and not np.all(np.isposinf(cap))
    qtol = 1e-12 + dt * dt
    ctol = dt * dt

    # rate at t = 0
    d[0] = dep0[0]
    if prescribed:
        kappa[0] = cap[0]
    elif q0 > qtol:
        kappa[0] = min(d[0], cap[0])
    elif m0 >= 1 - _MASS_TOL:
        kappa[0] = min(lam[0], d[0], cap[0])
    else:
        kappa[0] = min(lam[0], cap[0])

    for k in range(1, n + 1):
        # known parts of the convolutions (history i < k)
        b_rest = dt * (0.5 * S[k] * kappa[0] + np.dot(Sr[n - k + 1 : n], kappa[1:k]))
        c_rest = rise[k - 1] * kappa[0] + np.dot(Wr[n - k + 1 : n], kappa[1:k])
        room = 1.0 - surv0[k] - b_rest
        fill = max(0.0, 2.0 * room / dt)
        exact_entry = False
        if prescribed:
            kap = cap[k]
        elif Q[k - 1] > qtol and mass[k - 1] >= 1 - 1e-6:
            kap = (dep0[k] + c_rest) / (1.0 - w0)
            # pull drift in the in-service mass back towards 1 (damped to avoid zigzag)
            excess = surv0[k] + b_rest + 0.5 * dt * kap - 1.0
            kap = min(max(kap - _MASS_PULL * 2.0 * excess / dt, 0.0), cap[k])
        elif Q[k - 1] > qtol:
            kap = min(fill, cap[k])
        else:
            kap = min(lam[k], cap[k])
            if kap <= fill + 2.0 * ctol / dt:
                exact_entry = not capped
            else:
                kap = fill
        kappa[k] = kap
        if exact_entry:
            K[k] = K[k - 1] + (E[k] - E[k - 1])
        else:
            K[k] = K[k - 1] + 0.5 * dt * (kappa[k - 1] + kap)
        Q[k] = q0 + E[k] - K[k]
        if Q[k] < 0 and not prescribed:
            # queue empties inside the step; afterwards entry follows arrivals
            K[k] = q0 + E[k]
            Q[k] = 0.0
            kappa[k] = min(lam[k], cap[k], max(fill, 0.0)) if capped else min(lam[k], fill)
        B[k] = b_rest + 0.5 * dt * S[0] * kappa[k]
        mass[k] = surv0[k] + B[k]
        d[k] = dep0[k] + c_rest + w0 * kappa[k]
        if prescribed and (Q[k] < -1e-9 or mass[k] > 1 + 1e-9):
            what = "negative queue" if Q[k] < -1e-9 else "in-service mass above 1"
            raise PreconditionError(
                f"prescribed entry rate is infeasible ({what}) first at t = {float(t[k])!r}"
            )

    D = (m0 - surv0) + (K - B)
    X = inp.x0 + E - D
    return FluidSolution(inp, dist, policy, t, kappa, K, X, D, mass, d, E, lam, Q)


def cumulative_load(fa: FluidArrival, dist: ServiceDistribution, t):
    """``int_0^t (1 - G(t - s)) lambda(s) ds``: head-count of a start-empty system before it fills."""
    return 1.0 - _load_gap(fa, dist, np.atleast_1d(np.asarray(t, dtype=float))) if np.ndim(t) else \
        float(1.0 - _load_gap(fa, dist, np.array([float(t)]))[0])


def _load_gap(fa: FluidArrival, dist: ServiceDistribution, t: np.ndarray) -> np.ndarray:
    """``1 - int_0^t S(t - s) lambda(s) ds`` formed without cancellation for rates near one."""
    curve = fa.rate
    times = np.asarray(curve.times)
    vals = np.asarray(curve.values)
    if curve.interp == "step":
        out = np.ones(t.size)
        for i in range(times.size):
            a = times[i]
            b = times[i + 1] if i + 1 < times.size else math.inf
            started = t > a
            if not np.any(started):
                continue
            active = started & (t <= b)
            done = started & (t > b)
            ta = np.where(started, t - a, 0.0)
            # active piece: v (1 - Q(t - a)) with Q the tail integral of S
            out = np.where(active, out - vals[i] + vals[i] * dist.equilibrium_sf(ta), out)
            if np.isfinite(b):
                tb = np.where(done, t - b, 0.0)
                out = np.where(done, out - vals[i] * (dist.equilibrium_sf(tb) - dist.equilibrium_sf(ta)), out)
        return out
    res = np.empty(t.size)
    for j, tj in enumerate(t):
        pts = [p for p in times if 0 < p < tj]
        val, _ = integrate.quad(lambda s: dist.sf(tj - s) * curve(s), 0.0, tj, points=pts or None, limit=200)
        res[j] = 1.0 - val
    return res


def tau1(fa: FluidArrival, dist: ServiceDistribution, horizon: float | None = None) -> float:
    """First time a start-empty system reaches full occupancy; ``inf`` if it never does."""
    curve = fa.rate
    last = curve.times[-1]
    tail = curve.tail
    span = horizon if horizon is not None else last + 50.0
    step = 1e-3 if curve.interp == "step" else 2e-2
    lo = 0.0
    while True:
        grid = np.arange(lo, span + step, step)
        gap = _load_gap(fa, dist, grid)
        hit = np.flatnonzero(gap < 0)
        if hit.size:
            j = hit[0]
            if j == 0:
                return float(grid[0])
            f = lambda s: float(_load_gap(fa, dist, np.array([s]))[0])  # noqa: E731
            return float(optimize.brentq(f, grid[j - 1], grid[j], xtol=1e-12))
        if tail <= 1.0 or horizon is not None:
            return math.inf
        lo, span = grid[-1], 2.0 * span
