import numpy as np
import pytest

from pptorus import families as F
from pptorus.gauge import make_divergence_free
from pptorus.ppwave import (
    ClosedFormRicci,
    NotTTError,
    SolvabilityError,
    UParViolation,
    RigidityPreconditionError,
    assemble,
    compare_ricci,
    curvature_vanishing_check,
    energy_condition,
    extract_ids,
    killing_development,
    leaf_volumes,
    reparametrize,
    ricci_closed_form,
    ricci_fd_oracle,
    rigidity_check,
    traced_identity_check,
    tt_residuals,
)
from pptorus.scale_ode import ScaleData, compute_scale_data, solve_lambda
from pptorus.torus import FieldCurve, SGrid, TorusGrid

TP = 2 * np.pi
GRID = TorusGrid(2, 16)
RHO = 1 + 0.5 * np.sin(TP * GRID.coords()[0])


def _assemble(curve, rho=RHO):
    return assemble(curve, rho, solve_lambda(compute_scale_data(curve, rho), 0.0, 1.0, 0.0))


@pytest.fixture(scope="module")
def diagonal():
    sg = SGrid(-0.4, 0.4, 41)
    return _assemble(F.diagonal_exponential(GRID, (2, -2)).sample(sg))


@pytest.fixture(scope="module")
def gauged():
    sg = SGrid(-0.4, 0.4, 41)
    moving = F.pullback_family(F.diagonal_exponential(GRID, (2, -2)), "shear", 0.1, moving=True).sample(sg)
    curve, _ = make_divergence_free(moving, anchor=20)
    pp = _assemble(curve)
    return pp, ricci_fd_oracle(pp, indices=[10, 20, 30])


def test_assembled_density_matches_target(diagonal):
    cf = ricci_closed_form(diagonal)
    assert np.abs(cf.rho - RHO).max() < 1e-10
    assert not cf.ric_si.any() and not cf.ric_ij.any()
    # the constant shift leaves min u^{-2} at exactly one
    assert diagonal.w().min() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(leaf_volumes(diagonal.g), diagonal.lam.lam ** 2)


def test_closed_form_agrees_with_finite_differences(gauged):
    pp, fd = gauged
    cf = ricci_closed_form(pp)
    # differenced s-derivatives of the gauged curve: looser near the ends
    assert np.abs(cf.rho[3:-3] - RHO).max() < 1e-5
    diff = compare_ricci(pp, fd, cf)
    assert diff["ss"] < 1e-5 and diff["si"] < 1e-8 and diff["ij"] < 1e-7
    assert max(diff["vv"], diff["vs"], diff["vi"]) == 0.0


def test_oracle_detects_a_wrong_density(gauged):
    pp, fd = gauged
    cf = ricci_closed_form(pp)
    off = ClosedFormRicci(cf.ric_ij, cf.ric_si, cf.rho + 1e-3)
    assert compare_ricci(pp, fd, off)["ss"] > 9e-4


def test_curvature_identities(gauged):
    pp, fd = gauged
    assert curvature_vanishing_check(fd) < 1e-7
    assert traced_identity_check(fd, pp) < 1e-7


def test_oracle_stencil_bounds(diagonal):
    with pytest.raises(ValueError):
        ricci_fd_oracle(diagonal, indices=[2])
    with pytest.raises(ValueError):
        ricci_fd_oracle(diagonal, h=diagonal.sgrid.ds)


def test_initial_data_and_killing_development(gauged):
    pp, _ = gauged
    ids = extract_ids(pp)
    assert ids.U_norm_residual() < 1e-14
    assert ids.du_residual() < 1e-10 and ids.upar_residual() < 1e-10
    back = killing_development(ids)
    assert np.array_equal(back.u.values, pp.u.values)
    assert np.array_equal(back.g.values, pp.g.values)
    ids.k = ids.k.copy()
    ids.k[:, 0, 1] += 1e-3
    with pytest.raises(UParViolation):
        killing_development(ids)


@pytest.mark.parametrize("alpha,beta", [(2.0, 0.1), (-0.5, 0.0)])
def test_reparametrize_scales_density(diagonal, alpha, beta):
    cf = ricci_closed_form(diagonal)
    new = ricci_closed_form(reparametrize(diagonal, alpha, beta))
    old = cf.rho if alpha > 0 else cf.rho[::-1]
    assert np.abs(new.rho - alpha ** 2 * old).max() < 1e-10
    with pytest.raises(ValueError):
        reparametrize(diagonal, 0.0, 1.0)


def test_assembly_rejections():
    sg = SGrid(-0.4, 0.4, 41)
    conformal = FieldCurve(sg, GRID, np.stack([np.exp(s) * np.eye(2)[:, :, None, None] * np.ones(GRID.shape)
                                               for s in sg.s]))
    flat = F.constant_metric(GRID).sample(sg)
    lam = solve_lambda(compute_scale_data(flat, RHO), 0.0, 1.0, 0.0)
    with pytest.raises(NotTTError):
        assemble(conformal, RHO, lam)
    off = ScaleData(sg, lam.data.P + 1.0, lam.data.Sigma, 2)
    with pytest.raises(SolvabilityError):
        assemble(flat, RHO, solve_lambda(off, 0.0, 1.0, 0.0))
    short = F.constant_metric(GRID).sample(SGrid(-0.4, 0.4, 21))
    with pytest.raises(ValueError):
        assemble(short, RHO, lam)


def test_tt_residuals_and_energy_condition():
    curve = F.diagonal_exponential(GRID, (1, -1)).sample(SGrid(0.0, 1.0, 11))
    assert max(tt_residuals(curve)) < 1e-14
    assert energy_condition(RHO) == {"holds": True, "min_rho": 0.5}
    assert not energy_condition(RHO - 2)["holds"]


def test_rigidity_verdicts():
    sg = SGrid(0.0, TP, 65)
    const = F.constant_metric(GRID, [[1.2, 0.3], [0.3, 0.9]]).sample(sg)
    rigid = rigidity_check(const, np.zeros(GRID.shape), TP)
    assert rigid.verdict == "RIGID" and rigid.product is not None
    assert np.array_equal(rigid.product.g.values, const.values)
    periodic = F.periodic_diagonal(GRID, 0.1).sample(SGrid(0.0, TP, 129))
    obstructed = rigidity_check(periodic, np.zeros(GRID.shape), TP)
    assert obstructed.verdict == "OBSTRUCTED"
    assert obstructed.certificate["first_zero"] == pytest.approx(22.208, abs=1e-3)
    assert rigidity_check(periodic, -np.ones(GRID.shape), TP).verdict == "NOT_APPLICABLE"


def test_rigidity_preconditions():
    sg = SGrid(0.0, TP, 65)
    with pytest.raises(RigidityPreconditionError, match="not periodic"):
        rigidity_check(F.diagonal_exponential(GRID, (1, -1)).sample(sg), np.zeros(GRID.shape), TP)
    with pytest.raises(RigidityPreconditionError, match="integer number"):
        rigidity_check(F.constant_metric(GRID).sample(sg), np.zeros(GRID.shape), 1.0)
