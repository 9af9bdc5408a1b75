"""Versioned JSON verification reports and their comparison."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

__all__ = ["SCHEMA", "Check", "Report", "load_report", "report_diff"]

SCHEMA = 1


def _clean(x):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(x, float):
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and callable(x.item):  # numpy scalars
        return _clean(x.item())
    return x


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float
    passed: Optional[bool] = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.residual = float(self.residual)
        self.tolerance = float(self.tolerance)
        if self.passed is None:
            self.passed = bool(math.isfinite(self.residual) and self.residual <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual, "tolerance": self.tolerance,
                "pass": self.passed, "detail": self.detail}


@dataclass
class Report:
    command: str
    scenario: str
    settings: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def add(self, name: str, residual: float, tolerance: float, passed: Optional[bool] = None, **detail) -> Check:
        chk = Check(name, residual, tolerance, passed, detail)
        self.checks.append(chk)
        return chk

    def fail(self, stage: str, exc: BaseException) -> None:
        self.errors.append({"stage": stage, "type": type(exc).__name__, "message": str(exc)})

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return _clean({
            "schema": SCHEMA,
            "command": self.command,
            "scenario": self.scenario,
            "settings": self.settings,
            "pass": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "errors": self.errors,
            "data": self.data,
            "artifacts": sorted(self.artifacts),
        })

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def load_report(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported report schema {data.get('schema')!r}")
    return data


def report_diff(a: dict, b: dict, rtol: float = 0.0) -> dict:
    """Check-by-check comparison of two reports.

    ``same`` is true when both reports list the same checks with the same
    verdicts, the same errors, and residuals that agree to ``rtol``.
    """
    ca = {c["name"]: c for c in a.get("checks", [])}
    cb = {c["name"]: c for c in b.get("checks", [])}
    rows = []
    for name in sorted(set(ca) | set(cb)):
        x, y = ca.get(name), cb.get(name)
        row = {"name": name,
               "a": None if x is None else x["residual"],
               "b": None if y is None else y["residual"],
               "pass_a": None if x is None else x["pass"],
               "pass_b": None if y is None else y["pass"]}
        if x is None or y is None:
            row["status"] = "only-a" if y is None else "only-b"
        elif x["pass"] != y["pass"]:
            row["status"] = "verdict-changed"
        else:
            ra, rb = x["residual"], y["residual"]
            close = ra == rb or (isinstance(ra, float) and isinstance(rb, float)
                                 and abs(ra - rb) <= rtol * max(abs(ra), abs(rb)))
            row["status"] = "same" if close else "residual-changed"
        rows.append(row)
    same = all(r["status"] == "same" for r in rows) and a.get("errors") == b.get("errors")
    return {"same": same, "rows": rows, "errors_a": a.get("errors", []), "errors_b": b.get("errors", [])}
