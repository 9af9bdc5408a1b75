import json

import numpy as np
import pytest

from pptorus.report import SCHEMA, Check, Report, load_report, report_diff


def test_check_verdict_defaults():
    assert Check("a", 1e-9, 1e-8).passed
    assert not Check("a", 1e-7, 1e-8).passed
    assert not Check("a", float("nan"), 1.0).passed
    assert not Check("a", 0.0, 1.0, passed=False).passed


def test_report_json_is_stable(tmp_path):
    r = Report("run", "demo", {"tol_scale": 1.0})
    r.add("tt-gauge", np.float64(1e-12), 1e-8, divergence=np.float64(1e-12))
    r.add("rho-target", float("inf"), 1e-6)
    r.artifacts += ["b.csv", "a.csv"]
    d = r.as_dict()
    assert d["schema"] == SCHEMA and d["pass"] is False
    assert d["checks"][1]["residual"] == "inf"
    assert d["artifacts"] == ["a.csv", "b.csv"]
    text = r.to_json()
    assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
    path = r.write(tmp_path / "sub" / "report.json")
    assert load_report(path) == json.loads(text)


def test_failure_marks_report():
    r = Report("run", "demo")
    r.add("x", 0.0, 1.0)
    assert r.passed
    r.fail("gauge", RuntimeError("boom"))
    assert not r.passed
    assert r.errors == [{"stage": "gauge", "type": "RuntimeError", "message": "boom"}]


def test_load_report_rejects_other_schema(tmp_path):
    path = tmp_path / "r.json"
    path.write_text(json.dumps({"schema": 99}))
    with pytest.raises(ValueError, match="schema"):
        load_report(path)


def _report(**checks):
    r = Report("run", "demo")
    for name, (res, tol) in checks.items():
        r.add(name, res, tol)
    return r.as_dict()


def test_report_diff_statuses():
    a = _report(p=(1.0e-9, 1e-8), q=(2e-9, 1e-8), r=(1e-9, 1e-8))
    b = _report(p=(1.0e-9, 1e-8), q=(2.2e-9, 1e-8), s=(1e-9, 1e-8))
    rows = {row["name"]: row["status"] for row in report_diff(a, b)["rows"]}
    assert rows == {"p": "same", "q": "residual-changed", "r": "only-a", "s": "only-b"}
    c = _report(p=(1e-7, 1e-8))
    assert report_diff(_report(p=(1e-9, 1e-8)), c)["rows"][0]["status"] == "verdict-changed"


def test_report_diff_rtol_and_errors():
    a = _report(q=(2e-9, 1e-8))
    b = _report(q=(2.2e-9, 1e-8))
    assert not report_diff(a, b)["same"]
    assert report_diff(a, b, rtol=0.1)["same"]
    assert report_diff(a, a)["same"]
    b["errors"] = [{"stage": "gauge"}]
    assert not report_diff(a, b, rtol=0.1)["same"]
