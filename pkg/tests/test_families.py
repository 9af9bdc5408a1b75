import numpy as np
import pytest

from pptorus import families as F
from pptorus.riemann import MetricField
from pptorus.torus import FieldCurve, SGrid, TorusGrid

GRID = TorusGrid(2, 16)

MODELS = {
    "constant": lambda: F.constant_metric(GRID, [[2.0, 0.5], [0.5, 0.625]]),
    "diagonal": lambda: F.diagonal_exponential(GRID, (1.5, -1.5)),
    "periodic": lambda: F.periodic_diagonal(GRID, 0.1, 3.0),
    "pullback-moving": lambda: F.pullback_family(F.diagonal_exponential(GRID, (1, -1)), "gradient", 0.05),
    "pullback-fixed": lambda: F.pullback_family(F.periodic_diagonal(GRID, 0.2), "shear", 0.05, moving=False),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_analytic_derivatives_match_central_differences(name):
    model = MODELS[name]()
    s, h = 0.37, 1e-4
    d1 = (model.at(s + h) - model.at(s - h)) / (2 * h)
    d2 = (model.at(s + h) - 2 * model.at(s) + model.at(s - h)) / h ** 2
    assert np.abs(model.at(s, 1) - d1).max() < 1e-7
    assert np.abs(model.at(s, 2) - d2).max() < 1e-5


@pytest.mark.parametrize("name", sorted(MODELS))
def test_unit_volume(name):
    m = MetricField(MODELS[name]().at(0.8), GRID)
    assert m.volume == pytest.approx(1.0, abs=1e-12)


def test_periodic_diagonal_is_periodic():
    model = F.periodic_diagonal(GRID, 0.1, 3.0)
    assert np.abs(model.at(0.4) - model.at(3.4)).max() < 1e-14


def test_sample_and_curve_at():
    model = F.diagonal_exponential(GRID, (1, -1))
    sg = SGrid(0.0, 1.0, 21)
    c = model.sample(sg)
    assert c.values.shape == (21, 2, 2) + GRID.shape
    assert np.allclose(F.curve_at(c, 0.333), model.at(0.333))
    bare = FieldCurve(sg, GRID, c.values)
    # without the model: Lagrange interpolation and differenced derivatives
    assert np.abs(F.curve_at(bare, 0.333) - model.at(0.333)).max() < 1e-9
    assert np.abs(F.curve_at(bare, 0.5, 1) - model.at(0.5, 1)).max() < 1e-6


def test_validation():
    with pytest.raises(ValueError):
        F.diagonal_exponential(GRID, (1, 2, 3))
    with pytest.raises(ValueError):
        F.periodic_diagonal(TorusGrid(1, 8), 0.1)
    with pytest.raises(ValueError):
        F.displacement_field(GRID, "swirl")
    with pytest.raises(ValueError):
        F.pullback_family(F.constant_metric(GRID), "shear", 2.0, moving=False)
    with pytest.raises(ValueError, match="no derivative"):
        F.CurveModel(GRID, lambda s: np.zeros(GRID.shape)).at(0.0, 1)


def test_scalar_modes():
    x = GRID.coords()
    f = F.scalar_modes(GRID, 1.0, [{"amp": 0.5, "k": [1, 0], "kind": "sin"},
                                   {"amp": 0.25, "k": [0, 2], "kind": "cos"}])
    expected = 1.0 + 0.5 * np.sin(2 * np.pi * x[0]) + 0.25 * np.cos(4 * np.pi * x[1])
    assert np.allclose(f.at(3.0), expected)
    assert not f.at(0.0, 1).any()
    assert np.all(F.constant_scalar(GRID, 2.0).at(0.0) == 2.0)
