"""Moduli curves (g_s, rho_s, lambda_s), their equivalence and round trips.

A moduli curve stores a unit-volume flat metric curve, a density profile
and a solution of the scale ODE.  ``roundtrip`` sends it through
gauge -> scale -> assemble, reads (g, rho, lambda) back off the resulting
pp-wave and checks equivalence with the input through the recorded gauge
family.  A second, differently gauged representative is assembled too and
the two pp-waves are compared through diffeomorphism-invariant leaf data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .families import curve_at
from .gauge import Diffeo, DiffeoFamily, make_divergence_free, transformed_curve
from .ppwave import PPWaveMetric, assemble, leaf_volumes, ricci_closed_form
from .riemann import MetricField
from .scale_ode import LambdaSolution, compute_scale_data, solve_lambda
from .torus import FieldCurve, SGrid, integrate, s_derivative

__all__ = [
    "ModuliCurve",
    "PipelineError",
    "IntervalMismatch",
    "normalize",
    "scale",
    "equivalent",
    "extract",
    "leaf_invariants",
    "roundtrip",
]


class PipelineError(RuntimeError):
    """A round-trip stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class IntervalMismatch(ValueError):
    pass


@dataclass
class ModuliCurve:
    """Unit-volume flat curve, density profile and scale solution on one s-grid."""

    g: FieldCurve
    rho: FieldCurve
    lam: np.ndarray
    gauge: Optional[DiffeoFamily] = None
    meta: dict = field(default_factory=dict)

    @property
    def sgrid(self) -> SGrid:
        return self.g.sgrid

    def volume_defect(self) -> float:
        return float(np.abs(leaf_volumes(self.g) - 1.0).max())

    @classmethod
    def from_data(cls, g: FieldCurve, rho, s_star: float, lam0: float, lamdot0: float,
                  volume_tol: float = 1e-10) -> "ModuliCurve":
        """Solve the scale ODE for (g, rho) and keep lambda on the whole grid."""
        rho_c = _as_curve(rho, g)
        mc = cls(g, rho_c, np.empty(0), meta={"initial": (s_star, lam0, lamdot0)})
        if mc.volume_defect() > volume_tol:
            raise ValueError(f"curve is not unit volume (defect {mc.volume_defect():.2e})")
        sol = solve_lambda(compute_scale_data(g, rho_c), s_star, lam0, lamdot0)
        mc.lam = sol.lam
        mc.meta["solution"] = sol
        return mc


def _as_curve(rho, like: FieldCurve) -> FieldCurve:
    if isinstance(rho, FieldCurve):
        return rho
    vals = np.asarray(rho, dtype=float)
    if vals.shape == like.grid.shape:
        vals = np.broadcast_to(vals, (like.sgrid.m,) + like.grid.shape).copy()
    return FieldCurve(like.sgrid, like.grid, vals)


def normalize(metric_curve: FieldCurve) -> tuple:
    """Split a metric curve as lambda_s^2 g_s with vol(g_s) = 1.

    Returns (unit-volume curve, lambda samples); lambda = vol^{1/d}.  The
    derivative of the unit curve is carried when the input has one.
    """
    d = metric_curve.grid.d
    vol = leaf_volumes(metric_curve)
    lam = vol ** (1.0 / d)
    shape = (slice(None),) + (None,) * (metric_curve.values.ndim - 1)
    vals = metric_curve.values / (lam ** 2)[shape]
    deriv = None
    if metric_curve.deriv is not None:
        grid = metric_curve.grid
        # dlog(lambda)/ds = mean of tr gdot / (2 d)
        rate = np.empty(len(lam))
        for i in range(len(lam)):
            m = MetricField(metric_curve.values[i], grid)
            tr = np.einsum("ij...,ij...->...", m.ginv, metric_curve.deriv[i])
            rate[i] = float(integrate(tr, grid, m.sqrtdet)) / (2 * d * vol[i])
        deriv = metric_curve.deriv / (lam ** 2)[shape] - 2 * rate[shape] * vals
    return FieldCurve(metric_curve.sgrid, metric_curve.grid, vals, deriv), lam


def scale(unit_curve: FieldCurve, lam) -> FieldCurve:
    """lambda_s^2 g_s; the inverse of :func:`normalize`."""
    lam = np.asarray(lam, dtype=float)
    shape = (slice(None),) + (None,) * (unit_curve.values.ndim - 1)
    vals = unit_curve.values * (lam ** 2)[shape]
    deriv = None
    if unit_curve.deriv is not None:
        lamdot = s_derivative(lam, unit_curve.sgrid.ds)
        deriv = unit_curve.deriv * (lam ** 2)[shape] + (2 * lam * lamdot)[shape] * unit_curve.values
    return FieldCurve(unit_curve.sgrid, unit_curve.grid, vals, deriv)


def _sample_curve(curve: FieldCurve, s: float) -> np.ndarray:
    sg = curve.sgrid
    i = int(round((s - sg.s0) / sg.ds))
    if 0 <= i < sg.m and abs(sg.s[i] - s) < 1e-9 * max(1.0, sg.ds):
        return curve.values[i]
    return curve_at(curve, s)


def _sample_scalar(values: np.ndarray, sgrid: SGrid, s: float) -> float:
    i = int(round((s - sgrid.s0) / sgrid.ds))
    if 0 <= i < sgrid.m and abs(sgrid.s[i] - s) < 1e-9 * max(1.0, sgrid.ds):
        return float(values[i])
    return float(np.interp(s, sgrid.s, values))


def equivalent(A: ModuliCurve, B: ModuliCurve, alpha: float = 1.0, beta: float = 0.0,
               family: Optional[DiffeoFamily] = None, interval_tol: float = 1e-9) -> dict:
    """Sup residuals of the equivalence relation between two moduli curves.

    Checks g^A_s = psi_s^* g^B_t, rho^A_s = alpha^2 psi_s^* rho^B_t and
    lambda^A_s = lambda^B_t with t = alpha s + beta, psi the family on the
    s-grid of A (identity when None).  B is evaluated between its samples
    by its model or by Lagrange interpolation.
    """
    sa, sb = A.sgrid, B.sgrid
    ends = sorted((alpha * sa.s0 + beta, alpha * sa.s1 + beta))
    if abs(ends[0] - sb.s0) > interval_tol * max(1.0, abs(sb.s0)) or \
            abs(ends[1] - sb.s1) > interval_tol * max(1.0, abs(sb.s1)):
        raise IntervalMismatch(f"s -> {alpha} s + {beta} maps [{sa.s0}, {sa.s1}] to {ends}, not [{sb.s0}, {sb.s1}]")
    if family is not None and family.sgrid.m != sa.m:
        raise ValueError("diffeomorphism family must live on the s-grid of the first curve")
    res = {"metric": 0.0, "rho": 0.0, "lambda": 0.0}
    for i, s in enumerate(sa.s):
        t = alpha * s + beta
        gb = _sample_curve(B.g, t)
        rb = _sample_curve(B.rho, t)
        if family is not None:
            gb = family[i].pullback(gb)
            rb = family[i].pullback(rb, "scalar")
        res["metric"] = max(res["metric"], float(np.abs(A.g.values[i] - gb).max()))
        res["rho"] = max(res["rho"], float(np.abs(A.rho.values[i] - alpha ** 2 * rb).max()))
        res["lambda"] = max(res["lambda"], abs(float(A.lam[i]) - _sample_scalar(B.lam, sb, t)))
    res["max"] = max(res.values())
    return res


def extract(pp: PPWaveMetric) -> ModuliCurve:
    """Read (g, rho, lambda) back off a pp-wave.

    lambda from leaf volumes, rho from the closed-form Ricci profile, g as
    the spatial block divided by lambda^2.
    """
    unit, lam = normalize(pp.g)
    rho = ricci_closed_form(pp).rho
    return ModuliCurve(unit, FieldCurve(pp.sgrid, pp.grid, rho), lam)


def leaf_invariants(pp: PPWaveMetric, rho: Optional[np.ndarray] = None) -> dict:
    """Per-leaf data unchanged by s-dependent diffeomorphisms.

    Leaf volumes and the first two moments of rho against the leaf volume
    form.  ``rho`` defaults to the closed-form Ricci profile of ``pp``.
    """
    if rho is None:
        rho = ricci_closed_form(pp).rho
    vol = leaf_volumes(pp.g)
    m1 = np.empty(pp.sgrid.m)
    m2 = np.empty(pp.sgrid.m)
    for i in range(pp.sgrid.m):
        mu = pp.metric(i).sqrtdet
        m1[i] = float(integrate(rho[i], pp.grid, mu))
        m2[i] = float(integrate(rho[i] ** 2, pp.grid, mu))
    return {"volume": vol, "rho_moment1": m1, "rho_moment2": m2}


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # re-raised with the stage name attached
        raise PipelineError(name, exc) from exc


def _pipeline(curve: ModuliCurve) -> tuple:
    """gauge -> scale -> assemble; returns (pp, gauge family, solution, component)."""
    s_star, lam0, lamdot0 = curve.meta["initial"]
    gauged, fam = _stage("gauge", make_divergence_free, curve.g)
    rho_g = _stage("gauge", lambda: transformed_curve(curve.g, curve.rho, fam, lambda s: 1.0, lambda s: 0.0)[1])
    data = _stage("scale", compute_scale_data, gauged, rho_g)
    sol: LambdaSolution = _stage("scale", solve_lambda, data, s_star, lam0, lamdot0)
    comp = _stage("scale", sol.component_containing, s_star)
    pp = _stage("assemble", assemble, gauged, rho_g, sol, component=comp)
    return pp, fam, sol, comp


def roundtrip(curve: ModuliCurve, second: Optional[Diffeo] = None, trim: int = 2) -> dict:
    """Round trip of a moduli curve through its pp-wave.

    The extracted curve is compared with the input on the assembled
    component (``trim`` samples dropped at each end, where one-sided
    differences in s are least accurate).  ``second`` is a fixed
    diffeomorphism defining a second representative psi^* of the input;
    when given, that representative is also assembled and the leaf
    invariants of both pp-waves are compared.
    """
    if "initial" not in curve.meta:
        raise ValueError("moduli curve carries no scale-ODE initial data; build it with ModuliCurve.from_data")
    pp, fam, sol, (i0, i1) = _pipeline(curve)
    back = _stage("extract", extract, pp)
    sub = slice(trim, pp.sgrid.m - trim)
    sg = SGrid(float(pp.sgrid.s[sub][0]), float(pp.sgrid.s[sub][-1]), pp.sgrid.m - 2 * trim)
    A = ModuliCurve(FieldCurve(sg, pp.grid, back.g.values[sub]), FieldCurve(sg, pp.grid, back.rho.values[sub]),
                    back.lam[sub])
    j0, j1 = i0 + trim, i1 - trim
    B = ModuliCurve(curve.g.restrict(j0, j1), curve.rho.restrict(j0, j1), curve.lam[j0:j1 + 1])
    fam_sub = DiffeoFamily(sg, pp.grid, fam.disp[j0:j1 + 1])
    report = {"component": [int(i0), int(i1)], "trim": trim,
              "equivalence": equivalent(A, B, 1.0, 0.0, fam_sub),
              "volume_defect": float(np.abs(leaf_volumes(back.g) - 1.0).max()),
              "lambda_positive": bool(np.all(np.sign(sol.lam[i0:i1 + 1]) == np.sign(sol.lam[i0])))}
    residual = report["equivalence"]["max"]
    if second is not None:
        g2 = FieldCurve(curve.g.sgrid, curve.g.grid,
                        np.stack([second.pullback(v) for v in curve.g.values]),
                        None if curve.g.deriv is None else np.stack([second.pullback(v) for v in curve.g.deriv]))
        rho2 = FieldCurve(curve.rho.sgrid, curve.rho.grid,
                          np.stack([second.pullback(v, "scalar") for v in curve.rho.values]))
        rep2 = ModuliCurve(g2, rho2, curve.lam, meta={"initial": curve.meta["initial"]})
        pp2, _, _, comp2 = _pipeline(rep2)
        if tuple(comp2) != (i0, i1):
            raise PipelineError("compare", ValueError(f"components differ: {comp2} vs {(i0, i1)}"))
        inv1 = _stage("compare", leaf_invariants, pp, back.rho.values)
        inv2 = _stage("compare", leaf_invariants, pp2)
        diffs = {}
        for key in inv1:
            a, b = inv1[key][sub], inv2[key][sub]
            diffs[key] = float(np.abs(a - b).max() / max(1.0, float(np.abs(a).max())))
        diffs["max"] = max(diffs.values())
        report["second_representative"] = diffs
        residual = max(residual, diffs["max"])
    report["residual"] = residual
    return report
