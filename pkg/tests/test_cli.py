import json

import pytest
from click.testing import CliRunner

from pptorus.cli import main
from pptorus.torus import load_snapshot

SMALL_RUN = """
name: small
grid: {d: 2, n: 16}
s: {start: -0.4, stop: 0.4, samples: 41}
curve: {kind: diagonal-exponential, rates: [2, -2]}
rho:
  kind: fourier-modes
  constant: 1.0
  modes: [{amp: 0.5, k: [1, 0], kind: sin}]
checks:
  - {name: tt-gauge}
  - {name: ricci-blocks}
  - {name: null-blocks}
  - {name: rho-target}
  - {name: killing-development}
"""


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env)


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_RUN)
    return path


def test_run_writes_report_and_series(small, tmp_path):
    out = tmp_path / "out"
    res = invoke("run", small, "--out-dir", out)
    assert res.exit_code == 0, res.output
    assert res.output.count("PASS") == 5
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] and report["command"] == "run" and report["settings"]["threads"] == 1
    assert [c["name"] for c in report["checks"]] == ["tt-gauge", "ricci-blocks", "null-blocks", "rho-target",
                                                     "killing-development"]
    for name in report["artifacts"]:
        assert (out / name).exists()


def test_tol_scale_can_fail_a_run(small, tmp_path):
    res = invoke("run", small, "--out-dir", tmp_path / "out", "--tol-scale", "1e-12")
    assert res.exit_code == 1
    assert "FAIL" in res.output


def test_snapshot_dir_option_and_environment(small, tmp_path):
    snap = tmp_path / "snap"
    res = invoke("run", small, "--out-dir", tmp_path / "o1", "--snapshot-dir", snap)
    assert res.exit_code == 0
    grid, w = load_snapshot(snap / "lapse_middle.ppwf")
    assert grid.n == 16 and w.min() >= 1.0
    env_snap = tmp_path / "env"
    res = invoke("run", small, "--out-dir", tmp_path / "o2", env={"PPWF_SNAPSHOT_DIR": str(env_snap)})
    assert res.exit_code == 0 and (env_snap / "metric_middle.ppwf").exists()


def test_check_ode(scenario_dir, tmp_path):
    res = invoke("check-ode", scenario_dir / "ode_cos.yaml", "--out-dir", tmp_path)
    assert res.exit_code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    zeros = report["data"]["zeros"]
    assert len(zeros) == 2 and abs(zeros[1] - zeros[0] - 3.14159265) < 1e-5
    assert (tmp_path / "scale.csv").exists()


@pytest.mark.parametrize("name,code,verdict", [("rigid", 0, "RIGID"), ("obstructed", 0, "OBSTRUCTED"),
                                               ("nonperiodic", 1, None)])
def test_rigidity(scenario_dir, tmp_path, name, code, verdict):
    res = invoke("rigidity", scenario_dir / f"{name}.yaml", "--out-dir", tmp_path)
    assert res.exit_code == code
    report = json.loads((tmp_path / "report.json").read_text())
    if verdict is None:
        assert report["errors"][0]["type"] == "RigidityPreconditionError"
    else:
        assert report["data"]["verdict"]["verdict"] == verdict


def test_bad_scenario_exits_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("s: {start: 0, stop: 1}\ncurve: {kind: constant, colour: red}\n")
    res = invoke("run", bad, "--out-dir", tmp_path)
    assert res.exit_code == 2
    assert "unknown key 'colour'" in res.output


def test_report_diff(small, tmp_path):
    invoke("run", small, "--out-dir", tmp_path / "a")
    invoke("run", small, "--out-dir", tmp_path / "b", "--threads", "2")
    a, b = tmp_path / "a" / "report.json", tmp_path / "b" / "report.json"
    res = invoke("report-diff", a, b)
    assert res.exit_code == 0 and "identical" in res.output
    data = json.loads(b.read_text())
    data["checks"][0]["residual"] *= 2
    b.write_text(json.dumps(data))
    assert invoke("report-diff", a, b).exit_code == 1
    assert invoke("report-diff", a, b, "--rtol", "0.6").exit_code == 0
    (tmp_path / "old.json").write_text('{"schema": 0}')
    assert invoke("report-diff", a, tmp_path / "old.json").exit_code == 2
