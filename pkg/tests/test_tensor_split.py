import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pptorus import families as F
from pptorus.riemann import MetricField, divergence, hessian, lie_metric, trace
from pptorus.tensor_split import (
    JEquationViolation,
    NotFlatError,
    decompose,
    killing_basis,
    split_j_solution,
    tt_part,
    tt_solve,
)
from pptorus.torus import TorusGrid

TP = 2 * np.pi


def random_symmetric(seed, grid, modes=5, kmax=3):
    rng = np.random.default_rng(seed)
    x = grid.coords()
    h = np.zeros((grid.d, grid.d) + grid.shape)
    for i in range(grid.d):
        for j in range(i, grid.d):
            for _ in range(modes):
                k = rng.integers(-kmax, kmax + 1, grid.d)
                v = rng.normal() * np.cos(TP * np.tensordot(k, x, axes=1) + rng.uniform(0, TP))
                h[i, j] += v
                if i != j:
                    h[j, i] += v
    return h


@pytest.fixture(scope="module", params=["constant", "pullback"])
def metric(request):
    grid = TorusGrid(2, 16)
    base = F.constant_metric(grid, [[1.3, 0.25], [0.25, 0.9]])
    if request.param == "constant":
        return MetricField(base.at(0.0), grid)
    return MetricField(F.pullback_family(base, "gradient", 0.03).at(0.0), grid)


def test_recovers_known_components(metric):
    grid = metric.grid
    x = grid.coords()
    u = 0.7 + 0.3 * np.sin(TP * x[0])
    f = np.cos(TP * (x[0] + x[1])) - 0.4 * np.sin(TP * 2 * x[1])
    sigma = tt_part(metric, random_symmetric(0, grid), tol=1e-13)
    # Lie part of L_X g in normal form (X divergence free, no Killing part)
    X = np.stack([np.sin(TP * x[1]), np.sin(TP * x[0])])
    lie = decompose(metric, lie_metric(metric, X), tol=1e-13).lie_part
    h = u * metric.g + hessian(metric, f) + lie + sigma
    sp = decompose(metric, h, tol=1e-13)
    assert np.abs(sp.scalar_part - u * metric.g).max() < 1e-9
    df = sp.f - f
    assert np.abs(df - df.mean()).max() < 1e-9
    assert np.abs(sp.lie_part - lie).max() < 1e-9
    assert np.abs(sp.sigma - sigma).max() < 1e-9


def test_residuals_and_orthogonal_presentation(metric):
    h = random_symmetric(1, metric.grid)
    sp = decompose(metric, h, tol=1e-13)
    res = sp.residuals(h)
    assert res["reconstruction"] < 1e-12
    assert res["tt_trace"] < 1e-12 and res["tt_divergence"] < 1e-9
    assert max(v for k, v in res.items() if k.startswith("orth_")) < 1e-10
    # the orthogonal presentation is the same tensor
    assert np.abs(sum(sp.orthogonal_parts().values()) - sp.reconstruct()).max() < 1e-12
    # u g and nabla^2 f are complementary but not orthogonal
    assert res["scalar_hessian_raw"] > 1e-3
    assert sp.lichnerowicz_residual() >= 0.0


@settings(max_examples=6, deadline=None)
@given(a=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_split_is_linear(a, seed):
    grid = TorusGrid(2, 16)
    m = MetricField.constant([[1.1, 0.2], [0.2, 0.8]], grid)
    h1 = random_symmetric(seed, grid)
    h2 = random_symmetric(seed + 1, grid)
    p1, p2 = decompose(m, h1, 1e-13).parts(), decompose(m, h2, 1e-13).parts()
    p = decompose(m, a * h1 + h2, 1e-13).parts()
    for k in p:
        assert np.abs(p[k] - (a * p1[k] + p2[k])).max() < 1e-8 * (1 + abs(a))


def test_tt_solve_warm_start_agrees(metric):
    h = random_symmetric(2, metric.grid)
    s1, y1 = tt_solve(metric, h, tol=1e-13)
    s2, _ = tt_solve(metric, h, tol=1e-13, x0=y1)
    assert np.abs(s1 - s2).max() < 1e-10
    assert np.abs(trace(metric, s1)).max() < 1e-12
    assert np.abs(divergence(metric, s1)).max() < 1e-9


def test_j_equation_three_term_split(metric):
    grid = metric.grid
    x = grid.coords()
    f = np.sin(TP * x[0]) * np.cos(TP * x[1])
    sigma = tt_part(metric, random_symmetric(3, grid), tol=1e-13)
    h = -0.8 * metric.g + hessian(metric, f) + sigma
    js = split_j_solution(metric, h, tol=1e-13)
    c, fs, ss = js.as_tuple()
    assert c == pytest.approx(-0.8, abs=1e-10)
    assert js.lie_norm < 1e-8
    assert js.scalar_variation < 1e-8
    assert js.three_term_residual(h) < 1e-9
    assert np.abs(ss - sigma).max() < 1e-9


def test_j_equation_violation_is_rejected(metric):
    x = metric.grid.coords()
    h = np.sin(TP * x[0]) * metric.g  # div(u g) - d tr(u g) = -(d-1) du
    with pytest.raises(JEquationViolation) as info:
        split_j_solution(metric, h)
    assert info.value.residual > 1.0


def test_rejects_curved_metric():
    grid = TorusGrid(2, 16)
    x = grid.coords()
    e = np.exp(0.1 * np.sin(TP * x[0]) * np.cos(TP * x[1]))
    z = np.zeros_like(e)
    with pytest.raises(NotFlatError):
        decompose(MetricField(np.array([[e, z], [z, e]]), grid), np.zeros((2, 2) + grid.shape))


def test_killing_basis_on_flat_torus(metric):
    basis = killing_basis(metric)
    assert len(basis) == metric.grid.d
    for q in basis:
        assert np.abs(lie_metric(metric, q)).max() < 1e-9
