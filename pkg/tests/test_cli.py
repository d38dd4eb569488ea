import csv
import io
import json
import subprocess
import sys

import pytest

from cli_cases import DETERMINISM_CASES
from manyserver.cli import COMMANDS, build_parser, run


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_fluid_solve_overloaded(capsys):
    code = run(["fluid", "solve", "--arrival", "poisson:lambda=2", "--service", "exp", "--x0", "1",
                "--nu0", "equilibrium", "--T", "10", "--dt", "1e-3"])
    assert code == 0
    last = rows(capsys.readouterr().out)[-1]
    assert float(last["t"]) == 10.0
    assert float(last["K"]) == pytest.approx(10.0, abs=1e-2)


def test_dist_inspect_renewal(capsys):
    assert run(["dist", "inspect", "--service", "exp", "--t", "0.5"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert float(row["U"]) == pytest.approx(1.5, abs=1e-3)
    assert float(row["G"]) == pytest.approx(0.3934693402873666)


def test_dist_inspect_beyond_support(capsys):
    assert run(["dist", "inspect", "--service", "uniform", "--t", "1,3"]) == 0
    out = rows(capsys.readouterr().out)
    assert out[1]["h"] == "beyond_support"


def test_missing_service(capsys):
    assert run(["fluid", "solve", "--arrival", "poisson:lambda=2"]) == 2
    assert "service" in capsys.readouterr().err


def test_bad_values_exit_2(capsys):
    assert run(["fluid", "solve", "--arrival", "poisson:lambda=2", "--service", "gamma"]) == 2
    assert run(["fluid", "solve", "--arrival", "poisson:lambda=2", "--service", "exp", "--dt", "abc"]) == 2
    assert "dt" in capsys.readouterr().err
    assert run(["fluid", "solve", "--arrival", "poisson:lambda=1", "--service", "exp", "--T", "1", "--dt", "2"]) == 2
    assert run(["fluid", "nope"]) == 2


def test_precondition_exit_3(capsys):
    code = run(["fluid", "functionals", "--arrival", "poisson:lambda=piecewise(0:1,1:0,2:1)", "--service", "exp",
                "--T", "4", "--dt", "1e-2", "--times", "3"])
    assert code == 3
    assert "flat" in capsys.readouterr().err


def test_verdict_failure_exit_1(tmp_path):
    # an impossible tolerance forces a failed verdict
    code = run(["harness", "lln", "--arrival", "poisson:lambda=0.5", "--service", "exp", "--T", "2",
                "--ladder", "5,10", "--replications", "2", "--tolerance", "1e-9", "--dt", "1e-2",
                "--out", str(tmp_path)])
    assert code == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["verdicts"]["sup_X_final_within_tolerance"] is False


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"arrival": "poisson:lambda=0.5", "service": "exp", "T": 2.0, "dt": 0.01}))
    assert run(["fluid", "solve", "--config", str(cfg)]) == 0
    base = rows(capsys.readouterr().out)
    assert float(base[-1]["t"]) == 2.0
    assert run(["fluid", "solve", "--config", str(cfg), "--T", "3"]) == 0
    assert float(rows(capsys.readouterr().out)[-1]["t"]) == 3.0


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"arrival": "poisson:lambda=0.5", "service": "exp", "horizon": 3}))
    assert run(["fluid", "solve", "--config", str(cfg)]) == 2
    assert "horizon" in capsys.readouterr().err


def test_help_lists_every_option(capsys):
    parser = build_parser()
    for (group, cmd), opts in COMMANDS.items():
        with pytest.raises(SystemExit):
            parser.parse_args([group, cmd, "--help"])
        text = capsys.readouterr().out
        for name in opts:
            assert "--" + name.replace("_", "-") in text


def _outputs(argv, out):
    code = run(argv + ["--out", str(out)])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("argv", DETERMINISM_CASES, ids=lambda a: " ".join(a[:2]))
def test_byte_identical_reruns(argv, tmp_path):
    c1, first = _outputs(argv, tmp_path / "a")
    c2, second = _outputs(argv, tmp_path / "b")
    assert c1 == c2 and c1 in (0, 1)
    assert first and first == second


def test_sim_run_outputs(tmp_path):
    argv = ["sim", "run", "--arrival", "poisson:lambda=1", "--service", "exp", "--N", "10", "--T", "2",
            "--out", str(tmp_path)]
    assert run(argv) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"events.csv", "path.csv", "metadata.json"}
    events = rows((tmp_path / "events.csv").read_text())
    assert events[0]["kind"] == "start"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "manyserver", "fluid", "tau1", "--arrival", "poisson:lambda=0.5",
                           "--service", "exp"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "inf"
