import json
import shutil
import subprocess

import numpy as np
import pytest

from qei.cli import REFERENCE, RunConfig, build_parser, load_config, main, resolve_threads
from qei.errors import ConfigError

SMALL = {
    "seed": 3,
    "geometry": {"L": 2 * np.pi, "m": 1.0, "grid": 128},
    "catalog": {"J": 16},
    "truncation": {"N": 2, "n_max": 5},
    "states": [{"kind": "pair", "mode": 1, "eps": [0.15, 0.0]}, {"kind": "coherent", "alpha": {"2": [0.3, 0.1]}}],
    "windows": [{"center": 0.0, "width": 1.0}],
    "xs": [0.0, 1.0],
    "ts": [0.0, 0.5],
    "pairs": [[0, 0, 0.5, 1.0]],
    "passivity": {"words": 20, "thermal": False,
                  "processes": [{"T": 2.0, "coupling": "position", "carrier": 1.0}]},
    "microlocal": {"fan": 2},
    "campaigns": ["modes", "twopoint", "energy", "qwei", "passivity"],
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run_cli(tmp_path, *argv):
    out = tmp_path / "out.json"
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


@pytest.mark.parametrize("command", ["modes", "twopoint", "energy", "qwei", "passivity", "run"])
def test_subcommands_succeed(tmp_path, command):
    cfg = write(tmp_path, SMALL)
    code, rep = run_cli(tmp_path, command, "--config", cfg, "--csv", str(tmp_path / "t.csv"))
    assert code == 0
    assert rep["command"] == command and rep["passed"] and rep["seed"] == 3
    assert (tmp_path / "out.meta.json").exists()


def test_modes_report_contents(tmp_path):
    code, rep = run_cli(tmp_path, "modes", "--config", write(tmp_path, SMALL))
    om = rep["results"]["catalog"]["omegas"]
    assert om[:3] == pytest.approx([1.0, np.sqrt(2), np.sqrt(2)])


def test_qwei_report_counts(tmp_path):
    code, rep = run_cli(tmp_path, "qwei", "--config", write(tmp_path, SMALL))
    summary = rep["results"]["summary"]
    assert summary["triples"] == 4 and summary["passed"]


def test_run_with_empty_campaign_list(tmp_path):
    cfg = dict(SMALL, campaigns=[])
    code, rep = run_cli(tmp_path, "run", "--config", write(tmp_path, cfg))
    assert code == 0 and rep["results"] == {}


def test_microlocal_trimmed_grid_is_inconclusive(tmp_path):
    code, rep = run_cli(tmp_path, "microlocal", "--config", write(tmp_path, SMALL), "--fan", "1")
    res = rep["results"]
    assert code == 0
    assert res["contradictions"] == 0 and res["inconclusive"] == res["total"] == 3
    assert all(res["transversality"].values())


def test_reports_are_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["passivity", "--config", cfg, "--out", str(a)]) == 0
    assert main(["passivity", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    code, rep = run_cli(tmp_path, "passivity", "--config", write(tmp_path, SMALL), "--seed", "11")
    assert rep["seed"] == 11 and rep["results"]["seed"] == 11


@pytest.mark.parametrize("cfg,fragment", [
    ({"catalog": {"J": 4}, "states": [{"kind": "particle", "mode": 9}]}, "states[0].mode"),
    ({"catalog": {"J": 4}}, "seed"),
    ({"seed": 1, "catalog": {"J": 0}}, "catalog.J"),
    ({"seed": 1, "windows": [{"width": -1.0}]}, "windows[0]"),
    ({"seed": 1, "tolerances": {"tol_num": 0}}, "tolerances.tol_num"),
    ({"seed": 1, "campaigns": ["nope"]}, "campaigns"),
    ({"seed": 1, "catalog": {"J": 2}, "truncation": {"N": 3}}, "truncation.N"),
])
def test_config_errors_exit_2(tmp_path, capsys, cfg, fragment):
    if "seed" not in cfg and fragment != "seed":
        cfg = dict(cfg, seed=1)
    code = main(["modes", "--config", write(tmp_path, cfg)])
    assert code == 2
    assert fragment in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1,')
    assert main(["modes", "--config", str(bad)]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    assert main(["modes", "--config", str(tmp_path / "none.json")]) == 2


def test_certification_failure_exit_3(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL))
    cfg["passivity"] = {"words": 2, "thermal": True, "mixtures": 1}
    assert main(["passivity", "--config", write(tmp_path, cfg)]) == 3
    assert "CertificationError" in capsys.readouterr().err


def test_physics_violation_exit_1(tmp_path, monkeypatch):
    import qei.cli as cli

    monkeypatch.setitem(cli.COMMANDS, "modes", lambda cfg, args: ({"forced": True}, False))
    code, rep = run_cli(tmp_path, "modes", "--config", write(tmp_path, SMALL))
    assert code == 1 and rep["passed"] is False


def test_threads_resolution(monkeypatch):
    cfg = RunConfig.from_dict(dict(SMALL, threads=2))
    monkeypatch.delenv("QEI_THREADS", raising=False)
    assert resolve_threads(None, cfg) == 2
    monkeypatch.setenv("QEI_THREADS", "5")
    assert resolve_threads(None, cfg) == 5
    assert resolve_threads(3, cfg) == 3
    monkeypatch.setenv("QEI_THREADS", "x")
    with pytest.raises(ConfigError):
        resolve_threads(None, cfg)
    with pytest.raises(ConfigError):
        resolve_threads(0, cfg)


def test_threads_recorded_in_metadata(tmp_path, monkeypatch):
    monkeypatch.setenv("QEI_THREADS", "3")
    run_cli(tmp_path, "modes", "--config", write(tmp_path, SMALL))
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert meta["threads"] == 3


def test_reference_config_loads():
    cfg = load_config(None)
    assert cfg.J == REFERENCE["catalog"]["J"] and cfg.N == 2 and cfg.n_max == 8
    assert cfg.geometry.ultrastatic


def test_verify_all_select(tmp_path, capsys):
    code, rep = run_cli(tmp_path, "verify-all", "--select", "2")
    assert code == 0
    assert [c["index"] for c in rep["results"]["checks"]] == [2]
    assert "[PASS]  2." in capsys.readouterr().out


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.mark.skipif(shutil.which("qei") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = write(tmp_path, SMALL)
    proc = subprocess.run(["qei", "twopoint", "--config", cfg], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "twopoint"
