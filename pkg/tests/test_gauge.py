import numpy as np
import pytest

from pptorus import families as F
from pptorus.gauge import (
    Diffeo,
    DiffeoFamily,
    NotUnitVolume,
    change_hypersurface,
    geodesic_gauge,
    integrate_flow,
    make_divergence_free,
    solve_hamilton_jacobi,
    transformed_curve,
)
from pptorus.ppwave import PPWaveMetric, assemble, product_metric, ricci_closed_form
from pptorus.riemann import MetricField, divergence, trace
from pptorus.scale_ode import compute_scale_data, solve_lambda
from pptorus.torus import FieldCurve, SGrid, TorusGrid, s_derivative

TP = 2 * np.pi
GRID = TorusGrid(2, 16)


def shear_diffeo(a=0.05):
    x = GRID.coords()
    return Diffeo(GRID, np.stack([a * np.sin(TP * x[1]), np.zeros(GRID.shape)]))


def test_scalar_pullback_is_composition():
    x = GRID.coords()
    phi = shear_diffeo()
    f = np.cos(TP * x[0]) * np.sin(TP * x[1])
    p = phi.points()
    assert np.abs(phi.pullback(f, "scalar") - np.cos(TP * p[0]) * np.sin(TP * p[1])).max() < 1e-12
    t = Diffeo.translation(GRID, [0.25, 0.0])
    assert np.allclose(t.pullback(np.sin(TP * x[0]), "scalar"), np.cos(TP * x[0]))


def test_tensor_pullback_of_constant_metric():
    G = np.array([[1.2, 0.3], [0.3, 0.9]])
    x = GRID.coords()
    J = np.zeros((2, 2) + GRID.shape)
    J[0, 0] = J[1, 1] = 1.0
    J[0, 1] = 0.05 * TP * np.cos(TP * x[1])
    expected = np.einsum("ai...,bj...,ab->ij...", J, J, G)
    got = shear_diffeo().pullback(np.broadcast_to(G[:, :, None, None], (2, 2) + GRID.shape).copy())
    assert np.abs(got - expected).max() < 1e-12


def test_vector_and_covector_pullbacks_pair_naturally():
    x = GRID.coords()
    phi = Diffeo(GRID, 0.03 * F.displacement_field(GRID, "gradient"))
    X = np.stack([np.sin(TP * x[1]), 1.0 + 0.2 * np.cos(TP * x[0])])
    w = np.stack([np.cos(TP * x[0]), np.ones(GRID.shape)])
    lhs = np.einsum("i...,i...->...", phi.pullback(w, "covector"), phi.pullback(X, "vector"))
    rhs = phi.pullback(np.einsum("i...,i...->...", w, X), "scalar")
    assert np.abs(lhs - rhs).max() < 1e-10
    with pytest.raises(ValueError):
        phi.pullback(w, "spinor")


def test_inverse_and_compose():
    phi = Diffeo(GRID, 0.04 * F.displacement_field(GRID, "shear"))
    assert phi.compose(phi.inverse()).displacement_norm() < 1e-12
    assert phi.inverse().compose(phi).displacement_norm() < 1e-12
    ident = Diffeo.identity(GRID)
    assert np.array_equal(ident.pullback(phi.disp[0], "scalar"), phi.disp[0])


def test_flow_of_shear_field_is_exact():
    # X = (sin 2 pi y, 0) is constant along its own flow: phi_s = (x + s sin 2 pi y, y)
    x = GRID.coords()
    X = np.stack([np.sin(TP * x[1]), np.zeros(GRID.shape)])
    sg = SGrid(-0.2, 0.2, 21)
    fam = integrate_flow(lambda s: X, sg, GRID, anchor=10)
    for i, s in enumerate(sg.s):
        assert np.abs(fam.disp[i][0] - s * np.sin(TP * x[1])).max() < 1e-12
        assert np.abs(fam.disp[i][1]).max() < 1e-14
    assert fam.inverse_residual([0, 20]) < 1e-11


def test_flow_error_estimate():
    sg = SGrid(0.0, 0.5, 11)
    field = F.displacement_field(GRID, "gradient")
    fam = integrate_flow(lambda s: 0.1 * (1 + s) * field, sg, GRID, estimate_error=True)
    assert 0 < fam.meta["richardson"] < 1e-7


def test_divergence_free_gauge():
    sg = SGrid(-0.5, 0.5, 41)
    moving = F.pullback_family(F.diagonal_exponential(GRID, (2, -2)), "shear", 0.1, moving=True).sample(sg)
    gauged, fam = make_divergence_free(moving, anchor=20)
    div = max(np.abs(divergence(MetricField(gauged.values[i], GRID), gauged.deriv[i])).max() for i in range(41))
    tr = max(np.abs(trace(MetricField(gauged.values[i], GRID), gauged.deriv[i])).max() for i in range(41))
    assert div < 1e-8 and tr < 1e-8
    # stored derivative agrees with differencing the gauged samples
    fd = s_derivative(gauged.values, sg.ds)
    assert np.abs(fd[5:-5] - gauged.deriv[5:-5]).max() < 1e-5
    # the moving shear is pure gauge: the gauged curve is x-independent again
    assert max(np.abs(v - v[:, :, :1, :1]).max() for v in gauged.values) < 1e-6
    assert fam.disp[20].max() == 0.0


def test_divergence_free_gauge_needs_unit_volume():
    sg = SGrid(0.0, 1.0, 11)
    c = F.constant_metric(GRID, np.diag([2.0, 1.0])).sample(sg)
    with pytest.raises(NotUnitVolume):
        make_divergence_free(c)


def test_transformed_curve_derivative():
    sg = SGrid(-0.3, 0.3, 41)
    c = F.diagonal_exponential(GRID, (1, -1)).sample(sg)
    x = GRID.coords()
    gen = 0.05 * np.stack([np.cos(TP * x[0]), -np.sin(TP * x[1])])
    fam = integrate_flow(lambda s: gen, sg, GRID, anchor=20)
    new, rho = transformed_curve(c, 1.0 + 0.1 * np.sin(TP * x[0]), fam, lambda s: 2.0 + s, lambda s: 1.0)
    fd = s_derivative(new.values, sg.ds)
    assert np.abs(fd[4:-4] - new.deriv[4:-4]).max() < 1e-6
    assert rho.values.shape == (41,) + GRID.shape


def _profile_pp(m=61):
    sg = SGrid(-0.4, 0.4, m)
    c = F.diagonal_exponential(GRID, (2, -2)).sample(sg)
    rho = 1 + 0.5 * np.sin(TP * GRID.coords()[0])
    return assemble(c, rho, solve_lambda(compute_scale_data(c, rho), 0.0, 1.0, 0.0)), rho


def test_change_hypersurface_trivial_and_flat():
    pp, _ = _profile_pp()
    sg = pp.sgrid
    zero = FieldCurve(sg, GRID, np.zeros((sg.m,) + GRID.shape), np.zeros((sg.m,) + GRID.shape))
    same, fam = change_hypersurface(pp, zero, anchor=30)
    assert np.abs(same.u.values - pp.u.values).max() < 1e-13
    assert np.abs(same.g.values - pp.g.values).max() < 1e-13
    # re-slicing flat space keeps it flat; N = 16 under-resolves the flowed fields
    fine = TorusGrid(2, 32)
    flat = product_metric(sg, fine)
    x = fine.coords()
    f = FieldCurve(sg, fine, np.stack([0.05 * s * np.sin(TP * x[1]) for s in sg.s]),
                   np.stack([0.05 * np.sin(TP * x[1]) for _ in sg.s]))
    new, _ = change_hypersurface(flat, f, anchor=30)
    cf = ricci_closed_form(new)
    assert np.abs(cf.rho).max() < 1e-8 and np.abs(cf.ric_si).max() < 1e-8


def test_geodesic_gauge_sets_lapse_to_one():
    pp, _ = _profile_pp()
    assert np.abs(pp.u.values - 1).max() > 1e-3
    new, f, fam = geodesic_gauge(pp, anchor=30)
    assert np.abs(new.u.values - 1).max() < 1e-9
    assert isinstance(fam, DiffeoFamily) and f.values.shape == (61,) + GRID.shape


def test_hamilton_jacobi_anchor_and_rate():
    pp, _ = _profile_pp()
    f = solve_hamilton_jacobi(pp, anchor=30)
    assert not f.values[30].any()
    fd = s_derivative(f.values, pp.sgrid.ds)
    assert np.abs(fd[4:-4] - f.deriv[4:-4]).max() < 1e-6


def test_product_metric_is_vacuum():
    sg = SGrid(0.0, 1.0, 21)
    pp = product_metric(sg, GRID)
    assert isinstance(pp, PPWaveMetric)
    cf = ricci_closed_form(pp)
    assert np.abs(cf.rho).max() == 0.0
