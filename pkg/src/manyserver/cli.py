"""Command-line front end.

Options come from three layers: built-in defaults, an optional JSON config file
(``--config``), and explicit flags, later layers winning. Outputs are written
to ``--out`` when given and to stdout otherwise; floats are printed with
``repr`` so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arrivals import parse_arrival
from .dist import parse_service
from .errors import ConfigError, DomainError, PreconditionError
from .fluid import EntryPolicy, FluidInput, InitialMeasure, solve, tau1
from .harness import (
    ExperimentSpec,
    equilibrium_experiment,
    lln_experiment,
    martingale_experiment,
    maximality_experiment,
    renewal_bound_experiment,
    waiting_time_experiment,
)
from .sim import SimConfig, simulate

REQUIRED = object()


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(",", " ").split()]


def _opt_float(text):
    return None if text in (None, "", "none") else float(text)


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# name -> (converter, default, help)
_COMMON = {
    "seed": (int, 0, "master random seed"),
    "threads": (int, 1, "maximum parallel replications"),
}
_MODEL = {
    "arrival": (str, REQUIRED, "arrival spec, e.g. poisson:lambda=0.5"),
    "service": (str, REQUIRED, "service spec, e.g. exp or lognormal:sigma=1"),
}
_INIT = {
    "x0": (float, 0.0, "scaled initial number in system"),
    "nu0": (str, "empty", "initial age measure: empty or equilibrium (mass min(x0, 1))"),
}
_LADDER = {
    "ladder": (_ints, [25, 100, 400], "server counts N, strictly increasing"),
    "replications": (int, 20, "replications per N"),
    "grid_points": (int, 1001, "points of the comparison grid on [0, T]"),
}

COMMANDS: dict[tuple[str, str], dict] = {
    ("fluid", "solve"): {
        **_MODEL, **_INIT,
        "T": (float, 10.0, "horizon"),
        "dt": (float, 1e-3, "time step"),
        "policy": (str, "non_idling", "entry policy: non_idling, capped or prescribed"),
        "cap": (_opt_float, None, "entry-rate cap for capped/prescribed policies"),
        "snapshot_times": (_floats, [], "times of age-CDF snapshots"),
        "snapshot_ages": (_floats, [0.0, 0.5, 1.0, 2.0, 4.0], "ages of age-CDF snapshots"),
    },
    ("fluid", "tau1"): {**_MODEL},
    ("fluid", "functionals"): {
        **_MODEL, **_INIT,
        "T": (float, 10.0, "horizon"),
        "dt": (float, 1e-3, "time step"),
        "times": (_floats, REQUIRED, "evaluation times"),
        "residual_a": (float, 1.0, "threshold of the residual-service CDF column"),
    },
    ("sim", "run"): {
        **_MODEL, **_COMMON,
        "N": (int, REQUIRED, "number of servers"),
        "T": (float, 10.0, "horizon"),
        "x0": (int, 0, "initial number in system (unscaled)"),
        "nu0": (str, "equilibrium", "law of initial ages: equilibrium or zero"),
        "grid_points": (int, 101, "points of the scaled-path grid"),
    },
    ("harness", "lln"): {
        **_MODEL, **_INIT, **_LADDER, **_COMMON,
        "T": (float, 10.0, "horizon"),
        "dt": (float, 1e-3, "fluid time step"),
        "checkpoints": (_floats, [], "times of age-measure comparisons"),
        "tolerance": (_opt_float, None, "bound on the largest-N mean sup-error"),
    },
    ("harness", "equilibrium"): {
        "service": _MODEL["service"], **_INIT,
        "rate": (float, REQUIRED, "constant arrival rate"),
        "T": (float, 40.0, "horizon"),
        "dt": (float, 1e-2, "time step"),
        "checkpoints": (_floats, [10.0, 20.0, 40.0], "checkpoint times"),
        "tolerance": (float, 0.02, "bound on the final distance"),
    },
    ("harness", "martingale"): {
        **_MODEL, **_INIT, **_LADDER, **_COMMON,
        "T": (float, 10.0, "horizon"),
    },
    ("harness", "wait"): {
        **_MODEL, **_INIT, **_LADDER, **_COMMON,
        "T": (float, 12.0, "horizon"),
        "dt": (float, 1e-3, "fluid time step"),
        "times": (_floats, [5.0], "arrival times whose wait is compared"),
        "tolerance": (_opt_float, None, "bound on the largest-N mean absolute deviation"),
    },
    ("harness", "maximality"): {
        **_MODEL, **_INIT,
        "T": (float, 10.0, "horizon"),
        "dt": (float, 1e-2, "time step"),
        "cap": (float, REQUIRED, "constant entry-rate cap"),
        "prescribed": (_bool, False, "enter at exactly the cap instead of at most the cap"),
    },
    ("harness", "renewal"): {
        **_MODEL, **_INIT, **_LADDER, **_COMMON,
        "T": (float, 3.0, "horizon"),
        "t0": (float, 2.0, "start of the departure window"),
        "deltas": (_floats, [0.1, 0.5], "window lengths"),
    },
    ("dist", "inspect"): {
        "service": _MODEL["service"],
        "t": (_floats, [0.0, 0.5, 1.0, 2.0], "evaluation points"),
        "step": (float, 1e-3, "renewal-function step"),
    },
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manyserver", description="Many-server queue simulator and fluid solver.")
    parser.add_argument("--version", action="version", version=__version__)
    groups = parser.add_subparsers(dest="group", required=True)
    subs: dict[str, argparse._SubParsersAction] = {}
    for (group, cmd), opts in COMMANDS.items():
        if group not in subs:
            subs[group] = groups.add_parser(group).add_subparsers(dest="command", required=True)
        p = subs[group].add_parser(cmd, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of option values (flags override it)")
        p.add_argument("--out", help="output directory (default: print to stdout)")
        for name, (conv, default, text) in opts.items():
            shown = "required" if default is REQUIRED else f"default: {default}"
            if conv is _bool:
                p.add_argument(_flag(name), dest=name, action="store_true", help=f"{text} ({shown})")
            else:
                p.add_argument(_flag(name), dest=name, help=f"{text} ({shown})")
    return parser


def resolve(group: str, cmd: str, flags: dict) -> dict:
    """Merge defaults, config file and flags; validate and convert every value."""
    spec = COMMANDS[(group, cmd)]
    values = {k: v[1] for k, v in spec.items()}
    cfg_path = flags.pop("config", None)
    out = flags.pop("out", None)
    if cfg_path:
        try:
            data = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {cfg_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(spec) - {"out"})
        if unknown:
            raise ConfigError(f"unknown config keys for {group} {cmd}: {', '.join(unknown)}")
        out = data.pop("out", out) if out is None else out
        values.update(data)
    values.update(flags)
    missing = [k for k, v in values.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")
    resolved = {}
    for name, v in values.items():
        conv = spec[name][0]
        try:
            resolved[name] = v if v is None else conv(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {name}: {v!r}") from exc
    resolved["out"] = out
    return resolved


def _initial_measure(o, dist) -> tuple[float, InitialMeasure]:
    x0 = o["x0"]
    if o["nu0"] == "equilibrium":
        return x0, InitialMeasure.equilibrium(dist, min(x0, 1.0))
    if o["nu0"] == "empty":
        if x0 != 0:
            raise ConfigError("nu0 = empty requires x0 = 0")
        return x0, InitialMeasure.empty()
    raise ConfigError(f"unknown nu0 {o['nu0']!r}")


def _fluid_input(o):
    dist = parse_service(o["service"])
    arrival = parse_arrival(o["arrival"])
    x0, nu0 = _initial_measure(o, dist)
    return FluidInput(arrival.fluid(), x0, nu0), dist


def _spec(o) -> ExperimentSpec:
    dist = parse_service(o["service"])
    x0, nu0 = _initial_measure(o, dist)
    return ExperimentSpec(
        parse_arrival(o["arrival"]), dist, o["T"], tuple(o["ladder"]), o["replications"],
        x0=x0, nu0=nu0, grid_points=o["grid_points"], checkpoints=tuple(o.get("checkpoints", ())),
        seed=o["seed"], dt=o.get("dt", 1e-3), threads=o["threads"],
    )


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _emit(out, files: dict[str, str], stdout_key: str) -> None:
    if out is None:
        sys.stdout.write(files[stdout_key])
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text)


def _fluid_solve(o):
    inp, dist = _fluid_input(o)
    policy = EntryPolicy() if o["policy"] == "non_idling" else EntryPolicy(o["policy"], o["cap"])
    sol = solve(inp, dist, o["T"], o["dt"], policy)
    files = {"solution.csv": sol.to_csv()}
    if o["snapshot_times"]:
        files["snapshots.csv"] = sol.cdf_snapshots_csv(o["snapshot_times"], o["snapshot_ages"])
    _emit(o["out"], files, "solution.csv")
    return 0


def _fluid_tau1(o):
    value = tau1(parse_arrival(o["arrival"]).fluid(), parse_service(o["service"]))
    _emit(o["out"], {"tau1.txt": repr(value) + "\n"}, "tau1.txt")
    return 0


def _fluid_functionals(o):
    inp, dist = _fluid_input(o)
    sol = solve(inp, dist, o["T"], o["dt"])
    rows = []
    for t in o["times"]:
        rows.append((t, sol.eval_measure(t), sol.waiting_time(t), sol.sojourn_time(t), sol.workload(t),
                     sol.residual_measure_cdf(t, o["residual_a"])))
    text = _table(["t", "nu_mass", "waiting", "sojourn", "workload", "residual_cdf"], rows)
    _emit(o["out"], {"functionals.csv": text}, "functionals.csv")
    return 0


def _sim_run(o):
    dist = parse_service(o["service"])
    arrival = parse_arrival(o["arrival"])
    N, x0 = o["N"], o["x0"]
    n0 = min(x0, N)
    rng = np.random.default_rng(np.random.SeedSequence(o["seed"], spawn_key=(0, 0, 1)))
    if o["nu0"] == "equilibrium":
        ages = InitialMeasure.equilibrium(dist).sample_ages(n0, rng) if n0 else []
    elif o["nu0"] == "zero":
        ages = [0.0] * n0
    else:
        raise ConfigError(f"unknown nu0 {o['nu0']!r} for sim run")
    cfg = SimConfig(N, arrival, dist, o["T"], x0, tuple(float(a) for a in ages), seed=o["seed"], stream=(0, 0, 0))
    path = simulate(cfg)
    path.check_invariants()
    grid = np.linspace(0.0, o["T"], o["grid_points"])
    files = {
        "events.csv": path.event_log_csv(),
        "path.csv": path.scaled_path_csv(grid),
        "metadata.json": json.dumps(path.metadata, sort_keys=True, indent=2) + "\n",
    }
    _emit(o["out"], files, "events.csv")
    return 0


def _report_files(report):
    return {"report.json": report.to_json(), "summary.csv": report.summary_csv(), "series.csv": report.series_csv()}


def _harness(o, cmd):
    if cmd == "lln":
        report = lln_experiment(_spec(o), o["tolerance"])
    elif cmd == "martingale":
        report = martingale_experiment(_spec(o))
    elif cmd == "wait":
        report = waiting_time_experiment(_spec(o), o["times"], o["tolerance"])
    elif cmd == "renewal":
        report = renewal_bound_experiment(_spec(o), o["t0"], o["deltas"])
    elif cmd == "equilibrium":
        dist = parse_service(o["service"])
        x0, nu0 = _initial_measure(o, dist)
        report = equilibrium_experiment(dist, o["rate"], o["T"], o["checkpoints"], x0, nu0, o["dt"], o["tolerance"])
    elif cmd == "maximality":
        inp, dist = _fluid_input(o)
        report = maximality_experiment(inp, dist, o["cap"], o["T"], o["dt"], o["prescribed"])
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigError(cmd)
    _emit(o["out"], _report_files(report), "report.json")
    return 0 if report.passed else 1


def _dist_inspect(o):
    dist = parse_service(o["service"])
    rows = []
    for x in o["t"]:
        ev = dist.evaluate(x)
        h = "beyond_support" if ev.beyond_support else ev.hazard
        rows.append((x, ev.cdf, ev.pdf, h, dist.equilibrium_cdf(x), dist.renewal_function(x, o["step"])))
    text = _table(["t", "G", "g", "h", "equilibrium_cdf", "U"], rows)
    _emit(o["out"], {"inspect.csv": text}, "inspect.csv")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(ns).items() if k not in ("group", "command")}
    try:
        o = resolve(ns.group, ns.command, flags)
        if ns.group == "fluid":
            return {"solve": _fluid_solve, "tau1": _fluid_tau1, "functionals": _fluid_functionals}[ns.command](o)
        if ns.group == "sim":
            return _sim_run(o)
        if ns.group == "harness":
            return _harness(o, ns.command)
        return _dist_inspect(o)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
