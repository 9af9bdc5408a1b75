import numpy as np
import pytest

from pptorus import families as F
from pptorus.riemann import (
    MetricField,
    NotPositiveDefinite,
    christoffel,
    divergence,
    hessian,
    j_residual,
    l2_inner,
    laplacian,
    lichnerowicz,
    lie_metric,
    ricci,
    riemann,
    scalar_curvature,
    trace,
)
from pptorus.torus import SGrid, TorusGrid

TP = 2 * np.pi


def conformal_metric(x, amp=0.1):
    """e^{2 phi} delta with phi = amp sin(2 pi x) cos(2 pi y)."""
    phi = amp * np.sin(TP * x[0]) * np.cos(TP * x[1])
    e = np.exp(2 * phi)
    z = np.zeros_like(e)
    return np.array([[e, z], [z, e]]), phi


def fd_christoffel(metric_fn, x, h=1e-5):
    """Christoffel symbols from central differences of an analytic metric."""
    d = x.shape[0]
    g = metric_fn(x)
    dg = []
    for m in range(d):
        e = np.zeros_like(x)
        e[m] = h
        dg.append((metric_fn(x + e) - metric_fn(x - e)) / (2 * h))
    dg = np.array(dg)  # dg[m, i, j] = d_m g_ij
    ginv = np.moveaxis(np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    low = 0.5 * (np.einsum("jli...->lij...", dg) + np.einsum("ilj...->lij...", dg) - dg)
    return np.einsum("kl...,lij...->kij...", ginv, low)


def test_christoffel_matches_finite_difference_oracle():
    grid = TorusGrid(2, 32)
    x = grid.coords()

    def metric_fn(p):
        g0, _ = conformal_metric(p)
        shear = 0.05 * np.sin(TP * p[1])
        g0 = g0.copy()
        g0[0, 1] = g0[1, 0] = shear
        return g0

    m = MetricField(metric_fn(x), grid)
    assert np.abs(christoffel(m) - fd_christoffel(metric_fn, x)).max() < 1e-8


def test_conformal_metric_gauss_curvature():
    grid = TorusGrid(2, 32)
    x = grid.coords()
    g, phi = conformal_metric(x)
    m = MetricField(g, grid)
    # K = -e^{-2 phi} (d_xx + d_yy) phi and d^2 phi = -8 pi^2 phi for this phi
    K = -np.exp(-2 * phi) * (-2 * TP ** 2 * phi)
    assert np.abs(ricci(m) - K * g).max() < 1e-10
    assert np.abs(scalar_curvature(m) - 2 * K).max() < 1e-10


def test_riemann_symmetries_and_contraction():
    grid = TorusGrid(2, 16)
    x = grid.coords()
    g, _ = conformal_metric(x)
    m = MetricField(g, grid)
    R = riemann(m)
    assert np.abs(R + np.swapaxes(R, 2, 3)).max() < 1e-10
    low = np.einsum("ea...,abcd...->ebcd...", m.g, R)
    assert np.abs(low + np.swapaxes(low, 0, 1)).max() < 1e-10
    assert np.abs(np.einsum("abad...->bd...", R) - ricci(m)).max() < 1e-10


@pytest.mark.parametrize("kind", ["gradient", "shear"])
def test_pullback_of_constant_metric_is_flat(kind):
    grid = TorusGrid(2, 32)
    model = F.pullback_family(F.constant_metric(grid, [[1.2, 0.1], [0.1, 0.9]]), kind, 0.04)
    m = MetricField(model.at(0.7), grid)
    assert np.abs(ricci(m)).max() < 1e-9
    assert np.abs(riemann(m)).max() < 1e-9


def test_product_with_circle_in_three_dimensions():
    grid = TorusGrid(3, 16)
    x = grid.coords()
    g2, phi = conformal_metric(x[:2])
    g = np.zeros((3, 3) + grid.shape)
    g[:2, :2] = g2
    g[2, 2] = 1.0
    ric = ricci(MetricField(g, grid))
    K = -np.exp(-2 * phi) * (-2 * TP ** 2 * phi)
    assert np.abs(ric[:2, :2] - K * g2).max() < 1e-9
    assert np.abs(ric[2]).max() < 1e-12


def test_positive_laplacian_and_hessian():
    grid = TorusGrid(2, 32)
    x = grid.coords()
    g, _ = conformal_metric(x)
    m = MetricField(g, grid)
    f = np.cos(TP * x[0]) + 0.5 * np.sin(TP * 2 * x[1])
    assert np.abs(laplacian(m, f) + trace(m, hessian(m, f))).max() < 1e-9
    flat = MetricField.flat(grid)
    assert np.allclose(laplacian(flat, np.cos(TP * x[0])), TP ** 2 * np.cos(TP * x[0]), atol=1e-9)


def test_divergence_of_function_times_metric_is_its_differential():
    grid = TorusGrid(2, 32)
    x = grid.coords()
    g, _ = conformal_metric(x)
    m = MetricField(g, grid)
    f = np.sin(TP * x[1])
    df = np.stack([np.zeros_like(f), TP * np.cos(TP * x[1])])
    assert np.abs(divergence(m, f * m.g) - df).max() < 1e-9


def test_lie_derivative_matches_flow_pullback():
    # L_X g = d/dt phi_t^* g at t = 0 for the flow of X = (sin 2 pi y, 0)
    grid = TorusGrid(2, 32)
    x = grid.coords()
    G = np.array([[1.3, 0.2], [0.2, 0.8]])
    m = MetricField.constant(G, grid)
    X = np.stack([np.sin(TP * x[1]), np.zeros(grid.shape)])

    def pulled(t):
        J = np.zeros((2, 2) + grid.shape)
        J[0, 0] = J[1, 1] = 1.0
        J[0, 1] = t * TP * np.cos(TP * x[1])  # d(phi^0)/dy
        return np.einsum("ai...,bj...,ab->ij...", J, J, G)

    h = 1e-4
    fd = (pulled(h) - pulled(-h)) / (2 * h)
    assert np.abs(lie_metric(m, X) - fd).max() < 1e-8
    # translations are Killing
    assert np.abs(lie_metric(m, np.ones((2,) + grid.shape))).max() < 1e-12


def test_lichnerowicz_on_constant_metric_is_rough_laplacian():
    grid = TorusGrid(2, 16)
    x = grid.coords()
    m = MetricField.flat(grid)
    s = np.zeros((2, 2) + grid.shape)
    s[0, 1] = s[1, 0] = np.cos(TP * (x[0] + 2 * x[1]))
    assert np.abs(lichnerowicz(m, s) - TP ** 2 * 5 * s).max() < 1e-8


def test_l2_inner_constant_metric():
    grid = TorusGrid(2, 8)
    m = MetricField.constant([[4.0, 0.0], [0.0, 1.0]], grid)
    # |g|^2 = d and the volume is sqrt(det) = 2
    assert l2_inner(m, m.g, m.g) == pytest.approx(4.0)


def test_metric_validation():
    grid = TorusGrid(2, 8)
    with pytest.raises(NotPositiveDefinite):
        MetricField.constant([[1.0, 2.0], [2.0, 1.0]], grid)
    with pytest.raises(ValueError):
        MetricField(np.ones((2, 2, 8)), grid)


def test_j_residual():
    grid = TorusGrid(2, 16)
    sg = SGrid(-0.5, 0.5, 21)
    still = F.pullback_family(F.diagonal_exponential(grid, (2, -2)), "shear", 0.1, moving=False).sample(sg)
    moving = F.pullback_family(F.diagonal_exponential(grid, (2, -2)), "shear", 0.1, moving=True).sample(sg)
    assert np.abs(j_residual(still).values).max() < 1e-10
    assert np.abs(j_residual(moving).values).max() > 1e-2
