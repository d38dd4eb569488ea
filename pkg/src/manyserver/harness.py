"""Experiments that compare scaled simulations with the fluid model.

Every replication draws its randomness from ``SeedSequence(seed, spawn_key=(N, r, ...))``
so results do not depend on how replications are scheduled across workers.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arrivals import ArrivalModel
from .dist import ServiceDistribution
from .errors import ConfigError
from .fluid import EntryPolicy, FluidInput, FluidSolution, InitialMeasure, solve
from .sim import SimConfig, simulate

__all__ = [
    "ExperimentSpec",
    "ErrorReport",
    "lln_experiment",
    "equilibrium_experiment",
    "martingale_experiment",
    "waiting_time_experiment",
    "maximality_experiment",
    "renewal_bound_experiment",
]

SE_MARGIN = 3.0


@dataclass(frozen=True)
class ExperimentSpec:
    """Simulation template plus its fluid counterpart.

    ``x0`` and ``nu0`` describe the scaled initial state; replication r at size
    N starts with ``floor(N x0)`` customers of which ``min(., N)`` are in
    service with ages drawn i.i.d. from the normalised ``nu0``.
    """

    arrival: ArrivalModel
    service: ServiceDistribution
    T: float
    ladder: tuple[int, ...]
    replications: int
    x0: float = 0.0
    nu0: InitialMeasure = field(default_factory=InitialMeasure.empty)
    grid_points: int = 1001
    checkpoints: tuple[float, ...] = ()
    seed: int = 0
    dt: float = 1e-3
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(int(n) for n in self.ladder))
        object.__setattr__(self, "checkpoints", tuple(float(c) for c in self.checkpoints))
        if not self.ladder or any(n < 1 for n in self.ladder):
            raise ConfigError("ladder must list positive server counts")
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ConfigError("ladder must be strictly increasing")
        if self.replications < 1:
            raise ConfigError("replications must be positive")
        if any(not 0 <= c <= self.T for c in self.checkpoints):
            raise ConfigError("checkpoints must lie in [0, T]")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2")
        self.fluid_input()  # validates the non-idling condition on the initial state

    def fluid_input(self) -> FluidInput:
        return FluidInput(self.arrival.fluid(), self.x0, self.nu0)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid_points)

    def sim_config(self, N: int, rep: int) -> SimConfig:
        x0 = int(math.floor(N * self.x0 + 1e-9))
        n0 = min(x0, N)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(N, rep, 1)))
        ages = self.nu0.sample_ages(n0, rng) if n0 else np.empty(0)
        return SimConfig(N, self.arrival, self.service, self.T, x0, tuple(float(a) for a in ages),
                         seed=self.seed, stream=(N, rep, 0))

    def params(self) -> dict:
        return {
            "arrival": self.arrival.spec(),
            "service": self.service.spec,
            "T": self.T,
            "ladder": list(self.ladder),
            "replications": self.replications,
            "x0": self.x0,
            "nu0": self.nu0.label,
            "nu0_mass": self.nu0.mass,
            "grid_points": self.grid_points,
            "checkpoints": list(self.checkpoints),
            "dt": self.dt,
        }


@dataclass
class ErrorReport:
    """Per-N statistics, verdicts and provenance of one experiment."""

    experiment: str
    params: dict
    rows: list[dict] = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    series: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v is not False for v in self.verdicts.values())

    def row(self, N) -> dict:
        for r in self.rows:
            if r.get("N") == N:
                return r
        raise KeyError(N)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "rows": self.rows,
            "verdicts": self.verdicts,
            "seeds": self.seeds,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def summary_csv(self) -> str:
        keys = sorted({k for r in self.rows for k in r})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in self.rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])
        return buf.getvalue()

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["series", "t", "value"])
        for name, t, v in self.series:
            w.writerow([name, _fmt(t), _fmt(v)])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return float(v.mean()), math.inf
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


# -- replication workers (top level so they pickle) --

def _replicate(task):
    kind, cfg, payload = task
    path = simulate(cfg)
    path.check_invariants()
    if kind == "lln":
        grid, checkpoints = payload
        sp = path.scaled_path(grid)
        ages = [np.sort(path.age_measure_at(c).ages) for c in checkpoints]
        return {"X": sp.X, "K": sp.K, "ages": ages}
    if kind == "martingale":
        return {"sup": path.martingale_sup()}
    if kind == "wait":
        times = payload
        return {"w": np.array([path.waiting_time_process(t) for t in times])}
    if kind == "renewal":
        t0, deltas = payload
        d = path.counts_at(np.array([t0] + [t0 + dl for dl in deltas])).D / path.N
        return {"inc": d[1:] - d[0]}
    raise ValueError(kind)


def _run(spec: ExperimentSpec, kind: str, payload) -> dict[int, list[dict]]:
    tasks = [(kind, spec.sim_config(N, r), payload) for N in spec.ladder for r in range(spec.replications)]
    if spec.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * spec.threads))))
    else:
        results = [_replicate(t) for t in tasks]
    out: dict[int, list[dict]] = {}
    for (_, cfg, _), res in zip(tasks, results):
        out.setdefault(cfg.N, []).append(res)
    return out


def _seeds(spec: ExperimentSpec) -> dict:
    return {"master": spec.seed, "spawn_key": "(N, replication, 0) for the simulation; (N, replication, 1) for initial ages"}


def _decreasing(means: list[float]) -> bool | None:
    if len(means) < 2:
        return None
    return bool(all(b < a for a, b in zip(means, means[1:])))


def _ks(sorted_ages: np.ndarray, N: int, fluid_cdf) -> float:
    """Sup over a of |#{ages <= a}/N - F(a)| for a continuous CDF F."""
    n = sorted_ages.size
    gap = abs(n / N - float(fluid_cdf(np.array([np.inf]))[0]))
    if n:
        F = fluid_cdf(sorted_ages)
        after = np.arange(1, n + 1) / N
        gap = max(gap, float(np.max(np.abs(F - after))), float(np.max(np.abs(F - after + 1.0 / N))))
    return gap


def _fluid(spec: ExperimentSpec) -> FluidSolution:
    return solve(spec.fluid_input(), spec.service, spec.T, spec.dt)


def lln_experiment(spec: ExperimentSpec, tolerance: float | None = None) -> ErrorReport:
    """Sup-distance between scaled sample paths and the fluid solution across the ladder."""
    sol = _fluid(spec)
    grid = spec.grid
    Xf = np.interp(grid, sol.t, sol.X)
    Kf = np.interp(grid, sol.t, sol.K)
    runs = _run(spec, "lln", (grid, spec.checkpoints))
    cdfs = [lambda a, c=c: sol.measure_cdf(c, np.where(np.isinf(a), 1e300, a)) for c in spec.checkpoints]
    report = ErrorReport("lln", spec.params(), seeds=_seeds(spec))
    for N in spec.ladder:
        supX = [float(np.max(np.abs(r["X"] - Xf))) for r in runs[N]]
        supK = [float(np.max(np.abs(r["K"] - Kf))) for r in runs[N]]
        row = {"N": N}
        row["sup_X_mean"], row["sup_X_se"] = _mean_se(supX)
        row["sup_K_mean"], row["sup_K_se"] = _mean_se(supK)
        if spec.checkpoints:
            ks = [max(_ks(r["ages"][i], N, cdfs[i]) for i in range(len(cdfs))) for r in runs[N]]
            row["ks_mean"], row["ks_se"] = _mean_se(ks)
        report.rows.append(row)
    means = [r["sup_X_mean"] for r in report.rows]
    report.verdicts["sup_X_decreasing"] = _decreasing(means)
    if tolerance is not None:
        report.verdicts["sup_X_final_within_tolerance"] = bool(means[-1] <= tolerance)
    report.series = [("fluid_X", float(t), float(x)) for t, x in zip(grid, Xf)]
    report.metadata["note"] = "sup-norm proximity of sample paths to the deterministic limit"
    return report


def equilibrium_experiment(dist: ServiceDistribution, rate: float, T: float, checkpoints,
                           x0: float = 0.0, nu0: InitialMeasure | None = None, dt: float = 1e-2,
                           tolerance: float = 0.02, slack: float = 1e-6) -> ErrorReport:
    """Distance of the fluid age profile to the equilibrium law at checkpoints (fluid only).

    For ``rate < 1`` only a start-empty system is accepted and the check is
    monotone ramp-up of the head-count and of every age-CDF value.
    """
    nu0 = nu0 if nu0 is not None else InitialMeasure.empty()
    checkpoints = tuple(float(c) for c in checkpoints)
    empty = x0 == 0 and nu0.is_empty
    if rate < 1 and not empty:
        raise ConfigError("rates below 1 are only supported from an empty start")
    if any(not 0 < c <= T for c in checkpoints):
        raise ConfigError("checkpoints must lie in (0, T]")
    inp = FluidInput.start_empty(rate) if empty else FluidInput(FluidInput.start_empty(rate).arrival, x0, nu0)
    sol = solve(inp, dist, T, dt)
    params = {"service": dist.spec, "rate": rate, "T": T, "checkpoints": list(checkpoints), "x0": x0,
              "nu0": nu0.label, "dt": dt, "tolerance": tolerance}
    report = ErrorReport("equilibrium", params)
    report.rows = [{"t": c, "X": float(np.interp(c, sol.t, sol.X))} for c in checkpoints]
    if rate >= 1:
        dists = [sol.equilibrium_distance(c) for c in checkpoints]
        for row, v in zip(report.rows, dists):
            row["distance"] = v
            report.series.append(("distance", row["t"], v))
        report.verdicts["distance_nonincreasing"] = bool(all(b <= a + slack for a, b in zip(dists, dists[1:])))
        report.verdicts["final_within_tolerance"] = bool(dists[-1] <= tolerance)
    if rate <= 1 and empty:
        step = max(1, sol.t.size // 400)
        X = sol.X[::step]
        ages = np.linspace(0.0, min(T, 10.0), 21)
        prev = None
        cdf_ok = True
        for t in sol.t[::step]:
            cur = sol.measure_cdf(float(t), ages)
            if prev is not None and np.any(cur < prev - slack):
                cdf_ok = False
            prev = cur
        report.verdicts["head_count_nondecreasing"] = bool(np.all(np.diff(X) >= -slack))
        report.verdicts["age_cdf_nondecreasing"] = cdf_ok
    report.metadata["kappa_T"] = float(sol.kappa[-1])
    return report


def martingale_experiment(spec: ExperimentSpec, band: tuple[float, float] = (0.5, 2.0)) -> ErrorReport:
    """Mean sup |D/N - A/N| per N and its decay ratio between the smallest and largest N.

    The verdict asks the ratio to lie within ``band`` times the ideal
    ``sqrt(N_max / N_min)``.
    """
    runs = _run(spec, "martingale", None)
    report = ErrorReport("martingale", spec.params(), seeds=_seeds(spec))
    for N in spec.ladder:
        m, se = _mean_se([r["sup"] for r in runs[N]])
        report.rows.append({"N": N, "sup_mean": m, "sup_se": se})
    if len(spec.ladder) >= 2:
        first, last = report.rows[0]["sup_mean"], report.rows[-1]["sup_mean"]
        ideal = math.sqrt(spec.ladder[-1] / spec.ladder[0])
        ratio = first / last if last > 0 else math.inf
        report.metadata["decay_ratio"] = ratio
        report.metadata["ideal_ratio"] = ideal
        report.verdicts["decay_ratio_in_band"] = bool(band[0] * ideal <= ratio <= band[1] * ideal)
    return report


def waiting_time_experiment(spec: ExperimentSpec, times=None, tolerance: float | None = None) -> ErrorReport:
    """Empirical wait of the last arrival by t against the fluid wait at the same t."""
    times = tuple(float(t) for t in (times if times is not None else spec.checkpoints))
    if not times:
        raise ConfigError("waiting_time_experiment needs at least one time")
    sol = _fluid(spec)
    fluid_w = np.array([sol.waiting_time(t) for t in times])
    if not np.all(np.isfinite(fluid_w)):
        raise ConfigError("horizon too short: fluid mass arriving at a checkpoint does not enter service by T")
    runs = _run(spec, "wait", times)
    report = ErrorReport("wait", spec.params(), seeds=_seeds(spec))
    report.metadata["fluid_wait"] = {repr(t): float(w) for t, w in zip(times, fluid_w)}
    for N in spec.ladder:
        w = np.array([r["w"] for r in runs[N]])
        censored = int(np.sum(~np.isfinite(w)))
        dev = np.abs(w - fluid_w[None, :]).mean(axis=1)
        row = {"N": N, "censored": censored}
        row["mean_abs_dev"], row["mean_abs_dev_se"] = _mean_se(dev)
        row["bias"] = float(np.abs(w.mean(axis=0) - fluid_w).max())
        report.rows.append(row)
    devs = [r["mean_abs_dev"] for r in report.rows]
    if spec.replications > 1 or len(spec.ladder) > 1:
        report.verdicts["deviation_decreasing"] = _decreasing(devs)
    if tolerance is not None:
        report.verdicts["final_within_tolerance"] = bool(devs[-1] <= tolerance)
    return report


def maximality_experiment(inp: FluidInput, dist: ServiceDistribution, cap, T: float, dt: float = 1e-2,
                          prescribed: bool = False) -> ErrorReport:
    """Compare the non-idling solution with an alternative entry policy."""
    base = solve(inp, dist, T, dt)
    policy = EntryPolicy.prescribed(cap) if prescribed else EntryPolicy.capped(cap)
    alt = solve(inp, dist, T, dt, policy)
    dK = base.K - alt.K
    dD = base.D - alt.D
    report = ErrorReport("maximality", {"service": dist.spec, "T": T, "dt": base.dt, "x0": inp.x0,
                                        "policy": policy.kind,
                                        "cap": cap if isinstance(cap, (int, float)) else "function"})
    report.rows.append({"min_K_gap": float(dK.min()), "min_D_gap": float(dD.min()),
                        "K_gap_T": float(dK[-1]), "D_gap_T": float(dD[-1])})
    tol = -10.0 * base.dt
    report.verdicts["K_dominates"] = bool(dK.min() >= tol)
    report.verdicts["D_dominates"] = bool(dD.min() >= tol)
    return report


def renewal_bound_experiment(spec: ExperimentSpec, t0: float, deltas=(0.1, 0.5)) -> ErrorReport:
    """Mean scaled departures in (t0, t0 + delta] against the renewal function at delta."""
    deltas = tuple(float(d) for d in deltas)
    if t0 < 0 or t0 + max(deltas) > spec.T:
        raise ConfigError("t0 + delta must lie within [0, T]")
    runs = _run(spec, "renewal", (t0, deltas))
    report = ErrorReport("renewal_bound", {**spec.params(), "t0": t0, "deltas": list(deltas)}, seeds=_seeds(spec))
    ok = True
    for N in spec.ladder:
        inc = np.array([r["inc"] for r in runs[N]])
        for j, dl in enumerate(deltas):
            m, se = _mean_se(inc[:, j])
            U = spec.service.renewal_function(dl)
            report.rows.append({"N": N, "delta": dl, "mean": m, "se": se, "U": U})
            ok &= m <= U + SE_MARGIN * se
    report.verdicts["below_renewal_function"] = bool(ok)
    return report
