"""Exact event-driven simulation of the N-server first-come-first-serve queue.

Every in-service customer carries an absolute completion time in a heap, so the
next event is the earlier of the next arrival and the heap top. Customer ids
follow entry order: the ``n0`` customers in service at time zero get ids
``-n0+1 .. 0`` (oldest first), the initial queue gets ``1 .. q0`` and later
arrivals continue from ``q0 + 1``. With this labelling K(t) is the largest id
that has entered service.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .arrivals import ArrivalModel
from .dist import ServiceDistribution
from .errors import ConfigError, DomainError, InvariantError

__all__ = [
    "SimConfig",
    "SimulationPath",
    "AgeMeasure",
    "ScaledPath",
    "CustomerWaits",
    "simulate",
    "make_streams",
    "START",
    "ARRIVAL",
    "DEPARTURE",
]

START, ARRIVAL, DEPARTURE = 0, 1, 2
_KIND_NAMES = {START: "start", ARRIVAL: "arrival", DEPARTURE: "departure"}


def make_streams(seed: int, stream: Sequence[int] = ()) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (arrival, service) generators for one replication."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    a, s = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(s)


@dataclass(frozen=True)
class SimConfig:
    """One simulator run.

    ``initial_ages`` lists the ages of the ``min(initial_x0, N)`` customers in
    service at time zero. ``arrival_times`` replaces the arrival model with an
    explicit trace; ``service_times`` forces the requirements of customers
    ``1, 2, ...`` in order (sampling resumes once exhausted); ``initial_residuals``
    forces the residual requirements of the initial in-service customers in the
    order of ``initial_ages``. ``residual_service`` is an alternate law for the
    initial customers' requirements, conditioned on exceeding their ages.
    """

    N: int
    arrival: ArrivalModel | None
    service: ServiceDistribution
    T: float
    initial_x0: int = 0
    initial_ages: tuple[float, ...] = ()
    seed: int = 0
    stream: tuple[int, ...] = ()
    residual_service: ServiceDistribution | None = None
    arrival_times: tuple[float, ...] | None = None
    service_times: tuple[float, ...] | None = None
    initial_residuals: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("initial_ages", "stream", "arrival_times", "service_times", "initial_residuals"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(val))
        if not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise ConfigError("N must be a positive integer")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("T must be a positive finite time")
        if self.initial_x0 < 0 or int(self.initial_x0) != self.initial_x0:
            raise ConfigError("initial_x0 must be a nonnegative integer")
        if len(self.initial_ages) != min(self.initial_x0, self.N):
            raise ConfigError(
                f"initial_ages must have length min(initial_x0, N) = {min(self.initial_x0, self.N)}, "
                f"got {len(self.initial_ages)}"
            )
        law = self.residual_service or self.service
        for a in self.initial_ages:
            if not (0 <= a < law.support_end):
                raise ConfigError(f"initial age {a} outside [0, {law.support_end})")
        if self.arrival is None and self.arrival_times is None:
            raise ConfigError("either arrival or arrival_times is required")
        if self.arrival_times is not None:
            tr = np.asarray(self.arrival_times, dtype=float)
            if tr.size and (np.any(tr < 0) or np.any(np.diff(tr) < 0)):
                raise ConfigError("arrival_times must be nonnegative and nondecreasing")
        if self.service_times is not None and any(v <= 0 for v in self.service_times):
            raise ConfigError("service_times must be positive")
        if self.initial_residuals is not None:
            if len(self.initial_residuals) != len(self.initial_ages):
                raise ConfigError("initial_residuals must match initial_ages in length")
            if any(r <= 0 for r in self.initial_residuals):
                raise ConfigError("initial_residuals must be positive")

    @property
    def n0(self) -> int:
        return min(self.initial_x0, self.N)

    @property
    def q0(self) -> int:
        return self.initial_x0 - self.n0


class AgeMeasure(NamedTuple):
    """Point measure of ages of customers in service: parallel id and age arrays."""

    ids: np.ndarray
    ages: np.ndarray

    @property
    def mass(self) -> int:
        return int(self.ids.size)

    def integrate(self, f) -> float:
        return float(np.sum(f(self.ages))) if self.ids.size else 0.0

    def cdf(self, a) -> np.ndarray:
        """Count of ages <= a."""
        s = np.sort(self.ages)
        return np.searchsorted(s, np.asarray(a, dtype=float), side="right")


class ScaledPath(NamedTuple):
    t: np.ndarray
    E: np.ndarray
    X: np.ndarray
    D: np.ndarray
    K: np.ndarray
    I: np.ndarray


class CustomerWaits(NamedTuple):
    """Per-customer records for customers arriving after time zero."""

    ids: np.ndarray
    arrival: np.ndarray
    wait: np.ndarray
    sojourn: np.ndarray
    wait_censored: np.ndarray
    sojourn_censored: np.ndarray


@dataclass
class SimulationPath:
    """Event log plus per-customer records of one run.

    Event arrays start with a ``START`` row holding the initial state; every
    later row is the state right after the event. Per-customer arrays are
    indexed by ``id + n0 - 1``; ``entry`` is ``-age`` for customers already in
    service at time zero so that ``t - entry`` is the age throughout, and
    ``inf`` for customers not in service by T. ``departure`` holds the
    scheduled completion time, which may exceed T.
    """

    N: int
    T: float
    n0: int
    q0: int
    time: np.ndarray
    kind: np.ndarray
    cid: np.ndarray
    E: np.ndarray
    X: np.ndarray
    D: np.ndarray
    K: np.ndarray
    I: np.ndarray
    arrival: np.ndarray
    entry: np.ndarray
    departure: np.ndarray
    requirement: np.ndarray
    initial_age: np.ndarray
    service: ServiceDistribution
    residual_service: ServiceDistribution | None = None
    metadata: dict = field(default_factory=dict)

    # -- basic access --
    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.arrival.size) - self.n0 + 1

    @property
    def x0(self) -> int:
        return int(self.X[0])

    def _index(self, t) -> np.ndarray:
        return np.searchsorted(self.time, np.asarray(t, dtype=float), side="right") - 1

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    # -- invariants --
    def check_invariants(self) -> None:
        """Raise InvariantError unless every structural identity holds at every event."""
        X0 = self.X[0]
        busy = self.N - self.I
        if np.any(self.D != X0 - self.X + self.E):
            raise InvariantError("mass balance D = X(0) - X + E violated")
        if np.any(self.K != busy - busy[0] + self.D):
            raise InvariantError("entry identity K = <1,nu_t> - <1,nu_0> + D violated")
        if np.any(self.I != np.maximum(self.N - self.X, 0)):
            raise InvariantError("non-idling I = (N - X)^+ violated")
        if np.any(np.diff(self.time) < 0):
            raise InvariantError("event times not sorted")
        new = self.entry[self.n0 :]
        entered = np.isfinite(new)
        k = int(entered.sum())
        if not np.all(entered[:k]) or np.any(entered[k:]):
            raise InvariantError("customers entered service out of arrival order")
        if np.any(np.diff(new[:k]) < 0):
            raise InvariantError("entry times not nondecreasing in arrival order")
        if np.any(new[:k] < self.arrival[self.n0 : self.n0 + k]):
            raise InvariantError("customer entered service before arriving")
        counted = np.searchsorted(new[:k], self.time, side="right")
        if np.any(counted != self.K):
            raise InvariantError("K differs from the highest id in service")

    # -- measures and scaled processes --
    def age_measure_at(self, t: float) -> AgeMeasure:
        t = float(self._check_time(t))
        inside = (self.entry <= t) & (self.departure > t)
        return AgeMeasure(self.ids[inside], t - self.entry[inside])

    def scaled_path(self, grid) -> ScaledPath:
        grid = self._check_time(grid)
        i = self._index(grid)
        n = float(self.N)
        return ScaledPath(
            grid, self.E[i] / n, self.X[i] / n, self.D[i] / n, self.K[i] / n, self.I[i] / n
        )

    def counts_at(self, t) -> ScaledPath:
        t = self._check_time(t)
        i = self._index(t)
        return ScaledPath(t, self.E[i], self.X[i], self.D[i], self.K[i], self.I[i])

    # -- per-customer functionals --
    def customer_waits(self) -> CustomerWaits:
        """Waiting and sojourn times of customers arriving after time zero.

        The initial queue is excluded because its arrival epochs precede the
        observation window. Censored entries are ``inf``.
        """
        lo = self.n0 + self.q0
        arr = self.arrival[lo:]
        entry = self.entry[lo:]
        dep = self.departure[lo:]
        w_c = ~(entry <= self.T)
        s_c = ~(dep <= self.T)
        wait = np.where(w_c, np.inf, entry - arr)
        soj = np.where(s_c, np.inf, dep - arr)
        return CustomerWaits(self.ids[lo:], arr, wait, soj, w_c, s_c)

    def waiting_time_process(self, t):
        """Wait of the last customer to arrive by t, via inverse counting functions.

        ``inv[K](E(t) + q0) - inv[E](E(t))``; zero when nobody has arrived and
        ``inf`` when that customer has not entered service by T.
        """
        return self._inverse_gap(t, self.entry)

    def sojourn_time_process(self, t):
        return self._inverse_gap(t, self.departure)

    def _inverse_gap(self, t, times):
        t = self._check_time(t)
        e = self.E[self._index(t)]
        lo = self.n0 + self.q0
        arr = self.arrival[lo:]
        done = times[lo:]
        j = e - 1
        safe = np.maximum(j, 0)
        arrived = arr[safe] if arr.size else np.zeros_like(safe, dtype=float)
        finished = done[safe] if arr.size else np.zeros_like(safe, dtype=float)
        finished = np.where(finished <= self.T, finished, np.inf)
        out = np.where(e > 0, finished - arrived, 0.0)
        return float(out) if out.ndim == 0 else out

    # -- compensator and workload --
    def _cumhaz(self):
        """Cumulative hazard per customer (initial customers may use the alternate law)."""
        res = self.residual_service or self.service
        return res, self.service

    def compensator_at(self, times, cells: int = 2_000_000) -> np.ndarray:
        """Unscaled compensator A(t): sum over customers of the hazard integrated over time in service.

        Each customer contributes ``Lambda(age at min(t, departure)) - Lambda(age at 0 or entry)``
        where ``Lambda = -log(1 - G)``.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros(times.size)
        idx = np.flatnonzero(np.isfinite(self.entry))
        init_law, law = self._cumhaz()
        for dist, sel in ((init_law, idx[idx < self.n0]), (law, idx[idx >= self.n0])):
            if sel.size == 0:
                continue
            entry = self.entry[sel]
            dep = self.departure[sel]
            v = self.requirement[sel]
            start_age = self.initial_age[sel]
            base = dist.cumulative_hazard(start_age)
            step = max(1, cells // sel.size)
            for c in range(0, times.size, step):
                tt = times[c : c + step][:, None]
                end_age = np.clip(np.minimum(tt, dep) - entry, start_age, v)
                # customers entering after t contribute nothing
                end_age = np.where(tt >= entry, end_age, start_age)
                out[c : c + step] += np.sum(dist.cumulative_hazard(end_age) - base, axis=1)
        return out

    def busy_time_at(self, times) -> np.ndarray:
        """Integral of the number in service over [0, t]."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        busy = self.N - self.I
        dt = np.diff(self.time)
        area = np.concatenate(([0.0], np.cumsum(busy[:-1] * dt)))
        i = self._index(times)
        return area[i] + busy[i] * (times - self.time[i])

    def martingale_sup(self) -> float:
        """Exact sup over [0, T] of |D(t) - A(t)| / N.

        Between events D is constant and A nondecreasing, so the extremes sit
        just before and right at each event, and at T.
        """
        t = np.append(self.time, self.T)
        A = self.compensator_at(t)
        D_after = np.append(self.D, self.D[-1]).astype(float)
        D_before = np.concatenate(([self.D[0]], self.D[:-1], [self.D[-1]])).astype(float)
        gap = np.maximum(np.abs(D_after - A), np.abs(D_before - A))
        return float(gap.max()) / self.N

    def workload_at(self, t: float) -> float:
        """Scaled unfinished work: residual requirements in service plus requirements in queue, over N."""
        t = float(self._check_time(t))
        in_service = (self.entry <= t) & (self.departure > t)
        queued = (self.arrival <= t) & ~(self.entry <= t)
        queued[: self.n0] = False
        work = np.sum(self.requirement[in_service] - (t - self.entry[in_service]))
        work += np.sum(self.requirement[queued])
        return float(work) / self.N

    # -- export --
    def event_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "kind", "customer_id", "X", "D", "K", "I"])
        for i in range(self.time.size):
            cid = "" if self.kind[i] == START else int(self.cid[i])
            w.writerow([repr(float(self.time[i])), _KIND_NAMES[int(self.kind[i])], cid,
                        int(self.X[i]), int(self.D[i]), int(self.K[i]), int(self.I[i])])
        return buf.getvalue()

    def scaled_path_csv(self, grid) -> str:
        sp = self.scaled_path(grid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "E", "X", "D", "K", "I"])
        for row in zip(*sp):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


class _Sampler:
    """Buffered draws from a distribution, preceded by an optional forced prefix."""

    def __init__(self, dist, rng, forced=None, block=512):
        self.dist, self.rng, self.block = dist, rng, block
        self.forced = deque(forced or ())
        self.buf = np.empty(0)
        self.pos = 0

    def __call__(self) -> float:
        if self.forced:
            return float(self.forced.popleft())
        if self.pos >= self.buf.size:
            self.buf = np.asarray(self.dist.sample(self.rng, self.block), dtype=float)
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return float(v)


def simulate(cfg: SimConfig) -> SimulationPath:
    """Run the N-server FCFS system on [0, T]."""
    N, T = int(cfg.N), float(cfg.T)
    n0, q0 = cfg.n0, cfg.q0
    rng_arr, rng_srv = make_streams(cfg.seed, cfg.stream)
    init_law = cfg.residual_service or cfg.service

    # customers already in service, oldest first
    order = sorted(range(n0), key=lambda i: -cfg.initial_ages[i])
    ages = [float(cfg.initial_ages[i]) for i in order]
    if cfg.initial_residuals is not None:
        resid = [float(cfg.initial_residuals[i]) for i in order]
    else:
        resid = [init_law.sample_residual(a, rng_srv) for a in ages]

    arrival: list[float] = [-a for a in ages]
    entry: list[float] = [-a for a in ages]
    departure: list[float] = [r for r in resid]
    requirement: list[float] = [a + r for a, r in zip(ages, resid)]
    initial_age: list[float] = ages + []

    draw = _Sampler(cfg.service, rng_srv, cfg.service_times)
    heap: list[tuple[float, int]] = [(departure[i], i - n0 + 1) for i in range(n0)]
    heapq.heapify(heap)
    queue: deque[int] = deque()
    for j in range(1, q0 + 1):
        arrival.append(0.0)
        entry.append(math.inf)
        departure.append(math.inf)
        requirement.append(draw())
        initial_age.append(0.0)
        queue.append(j)

    E = D = K = 0
    X = cfg.initial_x0
    rows = [(0.0, START, 0, E, X, D, K, N - len(heap))]

    trace = deque(cfg.arrival_times) if cfg.arrival_times is not None else None

    def next_arr(now):
        if trace is not None:
            return trace.popleft() if trace else math.inf
        return cfg.arrival.next_arrival(N, now, rng_arr)

    t_arr = next_arr(0.0)
    next_id = q0 + 1
    while True:
        t_dep = heap[0][0] if heap else math.inf
        if t_dep <= t_arr:
            if t_dep > T:
                break
            now, j = heapq.heappop(heap)
            D += 1
            X -= 1
            if queue:
                k = queue.popleft()
                i = k + n0 - 1
                entry[i] = now
                departure[i] = now + requirement[i]
                heapq.heappush(heap, (departure[i], k))
                K += 1
            rows.append((now, DEPARTURE, j, E, X, D, K, N - len(heap)))
        else:
            if t_arr > T:
                break
            now = t_arr
            j = next_id
            next_id += 1
            E += 1
            X += 1
            arrival.append(now)
            requirement.append(draw())
            initial_age.append(0.0)
            if len(heap) < N:
                entry.append(now)
                departure.append(now + requirement[-1])
                heapq.heappush(heap, (departure[-1], j))
                K += 1
            else:
                entry.append(math.inf)
                departure.append(math.inf)
                queue.append(j)
            rows.append((now, ARRIVAL, j, E, X, D, K, N - len(heap)))
            t_arr = next_arr(now)

    cols = list(zip(*rows))
    ints = lambda c: np.asarray(c, dtype=np.int64)  # noqa: E731
    metadata = {
        "arrival": cfg.arrival.spec() if cfg.arrival is not None else "trace",
        "service": cfg.service.spec,
        "arrival_markovian": bool(cfg.arrival is not None and cfg.arrival_times is None and cfg.arrival.markovian),
        "seed": int(cfg.seed),
        "stream": list(cfg.stream),
    }
    return SimulationPath(
        N=N,
        T=T,
        n0=n0,
        q0=q0,
        time=np.asarray(cols[0], dtype=float),
        kind=ints(cols[1]).astype(np.int8),
        cid=ints(cols[2]),
        E=ints(cols[3]),
        X=ints(cols[4]),
        D=ints(cols[5]),
        K=ints(cols[6]),
        I=ints(cols[7]),
        arrival=np.asarray(arrival, dtype=float),
        entry=np.asarray(entry, dtype=float),
        departure=np.asarray(departure, dtype=float),
        requirement=np.asarray(requirement, dtype=float),
        initial_age=np.asarray(initial_age, dtype=float),
        service=cfg.service,
        residual_service=cfg.residual_service,
        metadata=metadata,
    )
