import numpy as np
import pytest

from pptorus import families as F
from pptorus.elliptic import ConvergenceError, ScalarLaplace, VectorLie, pcg
from pptorus.riemann import MetricField, laplacian, sym_norm2
from pptorus.torus import TorusGrid

TP = 2 * np.pi


@pytest.fixture(scope="module")
def bumpy():
    grid = TorusGrid(2, 32)
    x = grid.coords()
    e = np.exp(0.2 * np.sin(TP * x[0]) * np.cos(TP * x[1]))
    g = np.array([[e, 0.1 * np.sin(TP * x[1])], [0.1 * np.sin(TP * x[1]), 1.0 / e]])
    return MetricField(g, grid)


def test_pcg_matches_dense_solve():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(30, 30))
    A = a @ a.T + 30 * np.eye(30)
    b = rng.normal(size=30)
    res = pcg(lambda v: A @ v, b, lambda r: r / np.diag(A), tol=1e-13)
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-11)
    warm = pcg(lambda v: A @ v, b, lambda r: r, tol=1e-13, x0=res.x)
    assert warm.iterations <= 2


def test_pcg_zero_rhs_and_cap():
    A = np.diag(np.linspace(1, 1e4, 50))
    assert pcg(lambda v: A @ v, np.zeros(50), lambda r: r).iterations == 0
    with pytest.raises(ConvergenceError):
        pcg(lambda v: A @ v, np.ones(50), lambda r: r, tol=1e-14, maxiter=3)


def test_scalar_laplace_symmetric_and_inverts(bumpy):
    lap = ScalarLaplace(bumpy)
    rng = np.random.default_rng(4)
    f, h = rng.normal(size=(2,) + bumpy.grid.shape)
    assert np.vdot(lap.apply(f), h) == pytest.approx(np.vdot(f, lap.apply(h)), rel=1e-11)
    x = bumpy.grid.coords()
    f0 = np.cos(TP * x[0]) * np.sin(TP * 2 * x[1]) + 0.3 * np.sin(TP * x[1])
    sol = lap.solve(laplacian(bumpy, f0), tol=1e-13)
    diff = sol.x - f0
    assert np.abs(diff - diff.mean()).max() < 1e-10


def test_scalar_laplace_projects_out_the_mean(bumpy):
    x = bumpy.grid.coords()
    f0 = np.cos(TP * x[1])
    r = laplacian(bumpy, f0) + 2.5
    sol = ScalarLaplace(bumpy).solve(r, tol=1e-13)
    assert np.abs(laplacian(bumpy, sol.x) - (r - 2.5)).max() < 1e-8


@pytest.mark.parametrize("conformal", [False, True])
def test_vector_lie_adjoint_identity(bumpy, conformal):
    op = VectorLie(bumpy, conformal)
    rng = np.random.default_rng(5)
    grid = bumpy.grid
    x = grid.coords()
    y = np.stack([np.sin(TP * x[1]) + 0.2 * np.cos(TP * (x[0] + x[1])), np.cos(TP * 2 * x[0])])
    t = rng.normal(size=(2, 2) + grid.shape)
    t = t + t.transpose(1, 0, 2, 3)
    lhs = float(np.sum(bumpy.sqrtdet * sym_norm2(bumpy, op.operator(y), t)))
    rhs = float(np.sum(y * op.adjoint_raw(t)))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("conformal", [False, True])
def test_vector_lie_normal_solve_reproduces_range(bumpy, conformal):
    op = VectorLie(bumpy, conformal)
    x = bumpy.grid.coords()
    y0 = np.stack([np.sin(TP * x[1]), np.cos(TP * (x[0] - x[1]))])
    t = op.operator(y0)
    sol = op.solve_normal(t, tol=1e-13)
    assert np.abs(op.operator(sol.x) - t).max() < 1e-9


def test_killing_operator_kernel_on_flat_pullback():
    grid = TorusGrid(2, 16)
    m = MetricField(F.pullback_family(F.constant_metric(grid), "shear", 0.05).at(0.3), grid)
    op = VectorLie(m, conformal=False)
    # the normal equations of a range element of zero have the zero solution
    sol = op.solve_normal(np.zeros((2, 2) + grid.shape))
    assert sol.iterations == 0 and not sol.x.any()
