"""Scenario files: validated YAML descriptions of a pipeline run.

Parsing collects every problem (unknown keys, wrong types, missing
fields) before failing, and reports each with its location.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator, model_validator

from .families import (
    CurveModel,
    constant_metric,
    diagonal_exponential,
    periodic_diagonal,
    pullback_family,
    scalar_modes,
)
from .torus import SGrid, TorusGrid

__all__ = [
    "Scenario",
    "ScenarioError",
    "CHECK_NAMES",
    "DEFAULT_TOLERANCES",
    "parse_scenario",
    "load_scenario",
    "serialize_scenario",
]

# Default tolerances, keyed by check name.
DEFAULT_TOLERANCES = {
    "tt-gauge": 1e-8,
    "ricci-blocks": 1e-4,
    "null-blocks": 1e-5,
    "rho-target": 1e-6,
    "curvature-vanishing": 1e-5,
    "traced-identity": 1e-5,
    "killing-development": 1e-10,
    "moduli-roundtrip": 1e-6,
    "zero-spacing": 1e-6,
    "spinor-parallel": 1e-7,
    "dirac-witten": 1e-10,
    "spinor-constraint": 1e-9,
    "lichnerowicz": 1e-8,
}
CHECK_NAMES = tuple(DEFAULT_TOLERANCES)
CheckName = Literal[CHECK_NAMES]  # type: ignore[valid-type]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class GridSpec(_Strict):
    d: int = Field(2, ge=1, le=3)
    n: int = Field(32, ge=8)

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, n: int) -> int:
        if n & (n - 1):
            raise ValueError("n must be a power of two")
        return n


class SSpec(_Strict):
    start: float
    stop: float
    samples: int = Field(201, ge=9)

    @model_validator(mode="after")
    def _order(self):
        if not self.stop > self.start:
            raise ValueError("stop must exceed start")
        return self


class ConstantCurve(_Strict):
    kind: Literal["constant"]
    matrix: Optional[list[list[float]]] = None


class DiagonalExponentialCurve(_Strict):
    kind: Literal["diagonal-exponential"]
    rates: list[float]


class PeriodicDiagonalCurve(_Strict):
    kind: Literal["periodic-diagonal"]
    eps: float
    period: PositiveFloat = 2 * np.pi


BaseCurve = Annotated[Union[ConstantCurve, DiagonalExponentialCurve, PeriodicDiagonalCurve],
                      Field(discriminator="kind")]


class PullbackCurve(_Strict):
    kind: Literal["pullback"]
    base: BaseCurve
    field: Literal["gradient", "shear"] = "gradient"
    amplitude: float
    moving: bool = True


CurveSpec = Annotated[Union[ConstantCurve, DiagonalExponentialCurve, PeriodicDiagonalCurve, PullbackCurve],
                      Field(discriminator="kind")]


class Mode(_Strict):
    amp: float
    k: list[int]
    kind: Literal["sin", "cos"] = "sin"


class ConstantRho(_Strict):
    kind: Literal["constant"]
    value: float = 0.0


class FourierRho(_Strict):
    kind: Literal["fourier-modes"]
    constant: float = 0.0
    modes: list[Mode] = Field(default_factory=list)


RhoSpec = Annotated[Union[ConstantRho, FourierRho], Field(discriminator="kind")]


class LambdaSpec(_Strict):
    s_star: float = 0.0
    value: float = 1.0
    rate: float = 0.0

    @model_validator(mode="after")
    def _nonzero(self):
        if self.value == 0 and self.rate == 0:
            raise ValueError("initial data (0, 0) gives the zero solution")
        return self


class CheckSpec(_Strict):
    name: CheckName  # type: ignore[valid-type]
    tol: Optional[PositiveFloat] = None

    @property
    def tolerance(self) -> float:
        return self.tol if self.tol is not None else DEFAULT_TOLERANCES[self.name]


class SpinorSpec(_Strict):
    start: Optional[float] = None
    stride: int = Field(1, ge=1)


class RigiditySpec(_Strict):
    period: Optional[PositiveFloat] = None


class OutputSpec(_Strict):
    dir: str = "out"
    report: str = "report.json"
    csv: bool = True
    snapshots: bool = False


class Scenario(_Strict):
    name: str = "scenario"
    grid: GridSpec = GridSpec()
    s: SSpec
    curve: CurveSpec
    rho: RhoSpec = ConstantRho(kind="constant")
    lam: LambdaSpec = Field(LambdaSpec(), alias="lambda")
    checks: list[CheckSpec] = Field(default_factory=list)
    spinor: SpinorSpec = SpinorSpec()
    rigidity: RigiditySpec = RigiditySpec()
    outputs: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _consistent(self):
        problems = []
        d = self.grid.d
        curves = [self.curve] + ([self.curve.base] if isinstance(self.curve, PullbackCurve) else [])
        for c in curves:
            if isinstance(c, DiagonalExponentialCurve) and len(c.rates) != d:
                problems.append(f"curve: {len(c.rates)} rates given for d = {d}")
            if isinstance(c, ConstantCurve) and c.matrix is not None and np.shape(c.matrix) != (d, d):
                problems.append(f"curve: matrix must be {d}x{d}")
            if isinstance(c, PeriodicDiagonalCurve) and d < 2:
                problems.append("curve: periodic-diagonal needs d >= 2")
        if isinstance(self.rho, FourierRho):
            for j, m in enumerate(self.rho.modes):
                if len(m.k) != d:
                    problems.append(f"rho.modes.{j}.k: wave vector needs {d} entries")
        if not self.s.start <= self.lam.s_star <= self.s.stop:
            problems.append("lambda.s_star: outside the s-interval")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    # builders

    def torus(self) -> TorusGrid:
        return TorusGrid(self.grid.d, self.grid.n)

    def sgrid(self) -> SGrid:
        return SGrid(self.s.start, self.s.stop, self.s.samples)

    def curve_model(self) -> CurveModel:
        return _build_curve(self.curve, self.torus())

    def rho_field(self) -> np.ndarray:
        grid = self.torus()
        if isinstance(self.rho, ConstantRho):
            return np.full(grid.shape, self.rho.value)
        return scalar_modes(grid, self.rho.constant, [m.model_dump() for m in self.rho.modes]).at(0.0)

    def check_list(self, default: tuple = ()) -> list:
        """(name, tolerance) pairs; ``default`` names are used when none are listed."""
        if self.checks:
            return [(c.name, c.tolerance) for c in self.checks]
        return [(n, DEFAULT_TOLERANCES[n]) for n in default]


def _build_curve(spec, grid: TorusGrid) -> CurveModel:
    if isinstance(spec, ConstantCurve):
        return constant_metric(grid, spec.matrix)
    if isinstance(spec, DiagonalExponentialCurve):
        return diagonal_exponential(grid, spec.rates)
    if isinstance(spec, PeriodicDiagonalCurve):
        return periodic_diagonal(grid, spec.eps, spec.period)
    return pullback_family(_build_curve(spec.base, grid), spec.field, spec.amplitude, spec.moving)


class ScenarioError(ValueError):
    """All problems found in a scenario, each as 'location: message'."""

    def __init__(self, errors: list):
        self.errors = errors
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in errors))


def _format(err: dict) -> str:
    loc = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
    if err.get("type") == "extra_forbidden":
        return f"{loc}: unknown key '{err['loc'][-1]}'"
    return f"{loc}: {err.get('msg', 'invalid')}"


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text; raises :class:`ScenarioError` with every problem."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"<yaml>: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ScenarioError(["<root>: expected a mapping of sections"])
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError([_format(e) for e in exc.errors()]) from exc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def serialize_scenario(scenario: Scenario) -> str:
    data = scenario.model_dump(mode="json", by_alias=True, exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False)
