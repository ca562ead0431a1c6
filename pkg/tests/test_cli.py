import json

import pytest

from harris_regen.cli import main
from harris_regen.verify import read_report

SMALL = """
name = "cli_small"
master_seed = 11
method = "retrospective"
regimes = ["positive_eta"]
eta_grid = [0.5]
t_grid = [50.0, 200.0]
x_grid = [1.0, 2.0]
replications = 1000
n_cycles = 20000
n_per_state = 2000
x0 = 0
{extra}

[model]
kind = "ctmc"
two_state = [1.0, 1.0]

[observable]
name = "f"
values = [1.0, 0.0]
center = true
"""


def write_cfg(path, extra=""):
    path.write_text(SMALL.format(extra=extra))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(base / "small.toml")
    out = base / "out"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    return base, cfg, out


def test_simulate_writes_outputs(run_dir):
    _, _, out = run_dir
    for name in ("cycles.csv", "samples.csv", "constants.json", "constants_one.json", "nt.csv", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 11 and manifest["cert"]["alpha_minor"] > 0


def test_simulate_is_reproducible(run_dir, tmp_path):
    _, cfg, out = run_dir
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("cycles.csv", "samples.csv", "nt.csv", "constants.json"):
        assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes()
    assert main(["simulate", str(cfg), "--seed", "12", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "cycles.csv").read_bytes() != (out / "cycles.csv").read_bytes()


def test_verify_and_report_pass(run_dir, capsys):
    _, _, out = run_dir
    assert main(["verify", str(out)]) == 0
    reports = read_report(out / "report.json")
    assert reports and not any(r.failed for r in reports)
    assert (out / "curve.csv").exists()
    assert main(["report", str(out)]) == 0
    assert "K(f)" in capsys.readouterr().out


def test_estimate_and_curve(run_dir, tmp_path):
    _, cfg, out = run_dir
    assert main(["estimate", str(cfg), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "constants.json").read_text())["schema_version"] == 1
    assert main(["curve", str(cfg), str(tmp_path / "constants.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "curve.csv").exists()
    assert list(tmp_path.glob("slice_*.dat"))


def test_faults_make_verify_fail(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "faults.toml", 'fault_injection = ["splice", "bound_div", "halve_k"]')
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "f")]) == 0
    capsys.readouterr()
    assert main(["verify", str(tmp_path / "f")]) == 1
    failing = capsys.readouterr().out.splitlines()[-1]
    # halving K only bites where the moment bound is nearly tight, the cycle-length observable
    for name in ("xi_moment[one,p=1]", "duration_autocorr[lag=1]", "bound_domination"):
        assert name in failing
    assert main(["report", str(tmp_path / "f")]) == 1


def test_default_output_dir_from_environment(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path / "small.toml")
    monkeypatch.setenv("HARRIS_REGEN_OUT", str(tmp_path / "runs"))
    assert main(["estimate", str(cfg)]) == 0
    assert (tmp_path / "runs" / "cli_small" / "constants.json").exists()


# ---------------------------------------------------------------- usage errors


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.toml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_missing_model_file_exits_2(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({
        "master_seed": 1, "regimes": ["positive_eta"], "t_grid": [50.0], "x_grid": [1.0],
        "replications": 1000, "model_file": "absent.json", "observable": {"name": "f", "values": [1, 0]}}))
    assert main(["simulate", str(tmp_path / "c.json")]) == 2
    assert "model file not found" in capsys.readouterr().err


def test_bad_arguments_exit_2():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2


def test_verify_empty_or_missing_dir_exits_2(tmp_path, capsys):
    assert main(["verify", str(tmp_path)]) == 2
    assert "missing input" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "absent")]) == 2
    assert main(["report", str(tmp_path)]) == 2


def test_malformed_constants_exit_2(run_dir, tmp_path, capsys):
    _, cfg, _ = run_dir
    (tmp_path / "c.json").write_text('{"observable": "f",\n "c_f": }')
    assert main(["curve", str(cfg), str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2
    assert "c.json:2:" in capsys.readouterr().err
    (tmp_path / "c2.json").write_text('{"observable": "f"}')
    assert main(["curve", str(cfg), str(tmp_path / "c2.json"), "--out", str(tmp_path)]) == 2
    assert main(["curve", str(cfg), str(tmp_path / "absent.json")]) == 2


def test_tampered_manifest_exits_2(run_dir, tmp_path):
    import shutil

    _, _, out = run_dir
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    doc = json.loads((copy / "manifest.json").read_text())
    doc["config"]["replications"] = 5000
    (copy / "manifest.json").write_text(json.dumps(doc))
    assert main(["verify", str(copy)]) == 2
