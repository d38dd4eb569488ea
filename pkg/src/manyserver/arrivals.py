"""Arrival streams for the N-server simulator and cumulative arrival functions for the fluid solver."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .dist import ServiceDistribution, parse_service
from .errors import ConfigError, DomainError

__all__ = ["RateCurve", "ArrivalModel", "FluidArrival", "parse_arrival"]


@dataclass(frozen=True)
class RateCurve:
    """Nonnegative rate on [0, inf) given by breakpoints.

    ``interp="step"`` holds ``values[i]`` on ``[times[i], times[i+1])``;
    ``interp="linear"`` interpolates between breakpoints. Both hold the last
    value after the last breakpoint.
    """

    times: tuple[float, ...]
    values: tuple[float, ...]
    interp: str = "step"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.size != v.size:
            raise ConfigError("rate curve needs matching, nonempty breakpoint and value lists")
        if t[0] != 0.0:
            raise ConfigError("rate curve must start at t=0")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("rate curve breakpoints must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("rates must be finite and nonnegative")
        if self.interp not in ("step", "linear"):
            raise ConfigError(f"unknown interpolation {self.interp!r}")

    @classmethod
    def constant(cls, rate: float) -> "RateCurve":
        return cls((0.0,), (float(rate),))

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    @property
    def tail(self) -> float:
        return self.values[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        times = np.asarray(self.times)
        vals = np.asarray(self.values)
        if self.interp == "linear":
            out = np.interp(t, times, vals)
        else:
            out = vals[np.searchsorted(times, t, side="right") - 1]
        return float(out) if out.ndim == 0 else out

    def cumulative(self, t):
        """Exact integral of the rate over [0, t]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("t must be nonnegative")
        times = np.asarray(self.times)
        vals = np.asarray(self.values)
        if self.interp == "step":
            seg = np.diff(times) * vals[:-1]
        else:
            seg = np.diff(times) * 0.5 * (vals[:-1] + vals[1:])
        base = np.concatenate(([0.0], np.cumsum(seg)))
        i = np.searchsorted(times, t, side="right") - 1
        dt = t - times[i]
        if self.interp == "step":
            out = base[i] + vals[i] * dt
        else:
            nxt = np.minimum(i + 1, len(times) - 1)
            width = np.where(nxt > i, times[nxt] - times[i], 1.0)
            slope = np.where(nxt > i, (vals[nxt] - vals[i]) / width, 0.0)
            out = base[i] + vals[i] * dt + 0.5 * slope * dt**2
        return float(out) if out.ndim == 0 else out

    def piece_bounds(self, i: int) -> tuple[float, float]:
        end = self.times[i + 1] if i + 1 < len(self.times) else math.inf
        return self.times[i], end

    def majorant(self, i: int) -> float:
        """Upper bound of the rate on piece ``i``."""
        if self.interp == "step" or i + 1 >= len(self.times):
            return self.values[i]
        return max(self.values[i], self.values[i + 1])

    def spec(self) -> str:
        if len(self.times) == 1:
            return repr(self.values[0])
        fn = "piecewise" if self.interp == "step" else "linear"
        body = ",".join(f"{t!r}:{v!r}" for t, v in zip(self.times, self.values))
        return f"{fn}({body})"


@dataclass(frozen=True)
class FluidArrival:
    """Absolutely continuous cumulative arrival function E(t) = int_0^t rate."""

    rate: RateCurve

    @classmethod
    def constant(cls, rate: float) -> "FluidArrival":
        return cls(RateCurve.constant(rate))

    def cumulative(self, t):
        return self.rate.cumulative(t)

    def density(self, t):
        return self.rate(t)


@dataclass(frozen=True)
class ArrivalModel:
    """Arrival stream of an N-server system with rate ``rate(t) * N``.

    kind is ``poisson`` (possibly time-inhomogeneous), ``renewal`` (unit-mean
    interarrival family rescaled to rate lambda*N) or ``deterministic``.
    """

    kind: str
    rate: RateCurve
    interarrival: ServiceDistribution | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "renewal", "deterministic"):
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        if self.kind != "poisson" and not self.rate.is_constant:
            raise ConfigError(f"{self.kind} arrivals need a constant rate")
        if self.kind == "renewal" and self.interarrival is None:
            raise ConfigError("renewal arrivals need an interarrival distribution")

    @classmethod
    def poisson(cls, rate: float | RateCurve) -> "ArrivalModel":
        curve = rate if isinstance(rate, RateCurve) else RateCurve.constant(rate)
        return cls("poisson", curve)

    @classmethod
    def deterministic(cls, rate: float) -> "ArrivalModel":
        return cls("deterministic", RateCurve.constant(rate))

    @classmethod
    def renewal(cls, interarrival: ServiceDistribution, rate: float) -> "ArrivalModel":
        return cls("renewal", RateCurve.constant(rate), interarrival)

    @property
    def markovian(self) -> bool:
        # the residual interarrival time is Markov for every supported kind
        return True

    def fluid(self) -> FluidArrival:
        return FluidArrival(self.rate)

    def next_arrival(self, N: int, now: float, rng: np.random.Generator) -> float:
        """Time of the next arrival after ``now``.

        For renewal and deterministic streams ``now`` must be the previous
        arrival epoch (or 0). Returns ``inf`` when no further arrival occurs.
        """
        if now < 0:
            raise DomainError("now must be nonnegative")
        if self.kind == "deterministic":
            lam = self.rate.tail * N
            return now + 1.0 / lam if lam > 0 else math.inf
        if self.kind == "renewal":
            lam = self.rate.tail * N
            if lam <= 0:
                return math.inf
            while True:
                gap = self.interarrival.sample(rng) / lam
                if gap > 0:
                    return now + gap
        return self._thinning(N, now, rng)

    def _thinning(self, N, now, rng):
        curve = self.rate
        t = now
        i = int(np.searchsorted(curve.times, t, side="right") - 1)
        while True:
            lo, hi = curve.piece_bounds(i)
            bound = curve.majorant(i) * N
            if bound <= 0:
                if math.isinf(hi):
                    return math.inf
                t, i = hi, i + 1
                continue
            cand = t + rng.exponential(1.0 / bound)
            if cand >= hi:
                t, i = hi, i + 1
                continue
            t = cand
            if curve.interp == "step" or rng.random() * bound <= curve(t) * N:
                if t > now:
                    return t

    def spec(self) -> str:
        if self.kind == "renewal":
            return f"renewal:{self.interarrival.spec}:lambda={self.rate.tail!r}"
        return f"{self.kind}:lambda={self.rate.spec()}"


_CURVE = re.compile(r"^(piecewise|linear)\((.*)\)$")


def _parse_rate(text: str) -> RateCurve:
    text = text.strip()
    m = _CURVE.match(text)
    if m:
        pts = []
        for part in m.group(2).split(","):
            if ":" not in part:
                raise ConfigError(f"expected t:v breakpoint, got {part!r}")
            t, v = part.split(":", 1)
            pts.append((float(t), float(v)))
        interp = "step" if m.group(1) == "piecewise" else "linear"
        return RateCurve(tuple(p[0] for p in pts), tuple(p[1] for p in pts), interp)
    try:
        return RateCurve.constant(float(text))
    except ValueError as exc:
        raise ConfigError(f"cannot parse rate {text!r}") from exc


def parse_arrival(text: str) -> ArrivalModel:
    """Parse ``poisson:lambda=<v>``, ``poisson:lambda=piecewise(t0:v0,t1:v1,...)``,
    ``poisson:lambda=linear(...)``, ``renewal:<dist-spec>:lambda=<v>`` or
    ``deterministic:lambda=<v>``."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("empty arrival description")
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.lower()
    try:
        if kind == "renewal":
            body, sep, lam = rest.rpartition(":lambda=")
            if not sep:
                raise ConfigError("renewal arrivals need ':lambda=<v>'")
            return ArrivalModel.renewal(parse_service(body), float(lam))
        if kind in ("poisson", "deterministic"):
            if not rest.startswith("lambda="):
                raise ConfigError(f"{kind} arrivals need 'lambda=<v>'")
            curve = _parse_rate(rest[len("lambda="):])
            return ArrivalModel(kind, curve)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse arrival {text!r}") from exc
    raise ConfigError(f"unknown arrival kind {kind!r}")
