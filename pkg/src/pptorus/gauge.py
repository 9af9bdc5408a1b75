"""Diffeomorphisms of the torus, their flows, and gauge transformations.

A diffeomorphism isotopic to the identity is stored by its displacement,
phi(x) = x + D(x) with D periodic.  Families phi_s come from integrating
s-dependent vector fields with RK4 and trigonometric interpolation.  The
module also implements the divergence-free gauge for curves of flat
metrics, the change of spacelike hypersurface of a pp-wave, and the
geodesic gauge in which the lapse becomes identically one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .elliptic import VectorLie
from .families import curve_at
from .riemann import MetricField, lie_metric, raise_index, trace
from .torus import FieldCurve, SGrid, TorusGrid, gradient, interpolate, s_derivative

__all__ = [
    "Diffeo",
    "DiffeoFamily",
    "FlowError",
    "NotUnitVolume",
    "FocalPointError",
    "integrate_flow",
    "make_divergence_free",
    "transformed_curve",
    "change_hypersurface",
    "geodesic_gauge",
    "solve_hamilton_jacobi",
]

INVERSE_ITERATIONS = 20
FOCAL_THRESHOLD = 10.0


class FlowError(RuntimeError):
    """The flow integration is not accurate enough (inverse composition check)."""


class NotUnitVolume(ValueError):
    pass


class FocalPointError(RuntimeError):
    """The Hamilton-Jacobi gradient blew up; carries the last good s."""

    def __init__(self, s_reached: float, grad_norm: float):
        super().__init__(f"|df| reached {grad_norm:.3g} > {FOCAL_THRESHOLD} at s = {s_reached:.6g}")
        self.s_reached = s_reached
        self.grad_norm = grad_norm


@dataclass
class Diffeo:
    """phi(x) = x + D(x) on the torus grid."""

    grid: TorusGrid
    disp: np.ndarray

    @classmethod
    def identity(cls, grid: TorusGrid) -> "Diffeo":
        return cls(grid, np.zeros((grid.d,) + grid.shape))

    @classmethod
    def translation(cls, grid: TorusGrid, shift) -> "Diffeo":
        t = np.asarray(shift, dtype=float)[(...,) + (None,) * grid.d]
        return cls(grid, np.broadcast_to(t, (grid.d,) + grid.shape).copy())

    def points(self) -> np.ndarray:
        return self.grid.coords() + self.disp

    def jacobian(self) -> np.ndarray:
        """J[a, i] = d_i phi^a."""
        eye = np.eye(self.grid.d)[(...,) + (None,) * self.grid.d]
        return eye + np.swapaxes(gradient(self.disp, self.grid), 0, 1)

    def inverse(self, iterations: int = INVERSE_ITERATIONS) -> "Diffeo":
        """Fixed-point iteration E = -D(x + E)."""
        x = self.grid.coords()
        e = -self.disp.copy()
        for _ in range(iterations):
            e = -interpolate(self.disp, self.grid, x + e)
        return Diffeo(self.grid, e)

    def compose(self, other: "Diffeo") -> "Diffeo":
        """self o other."""
        pts = other.points()
        return Diffeo(self.grid, other.disp + interpolate(self.disp, self.grid, pts))

    def at_points(self, f: np.ndarray) -> np.ndarray:
        return interpolate(f, self.grid, self.points())

    def pullback(self, f: np.ndarray, kind: str = "tensor") -> np.ndarray:
        """phi^* of a scalar, vector, covector or symmetric 2-tensor field."""
        g = self.grid
        g.check(f)
        if not np.any(self.disp):
            return np.array(f, copy=True)
        fp = self.at_points(f)
        if kind == "scalar":
            return fp
        J = self.jacobian()
        if kind == "covector":
            return np.einsum("ai...,a...->i...", J, fp)
        if kind == "vector":
            Jm = np.moveaxis(np.moveaxis(J, 0, -1), 0, -1)
            sol = np.linalg.solve(Jm, np.moveaxis(fp, 0, -1)[..., None])[..., 0]
            return np.moveaxis(sol, -1, 0)
        if kind == "tensor":
            return np.einsum("ai...,bj...,ab...->ij...", J, J, fp)
        raise ValueError(f"unknown field kind '{kind}'")

    def displacement_norm(self) -> float:
        return float(np.abs(self.disp).max())


@dataclass
class DiffeoFamily:
    """Maps phi_s on an s-grid with phi = id at the anchor sample."""

    sgrid: SGrid
    grid: TorusGrid
    disp: np.ndarray
    generators: Optional[np.ndarray] = None
    anchor: int = 0
    meta: dict = field(default_factory=dict)
    _inverses: dict = field(default_factory=dict, repr=False)

    @classmethod
    def identity(cls, sgrid: SGrid, grid: TorusGrid) -> "DiffeoFamily":
        z = np.zeros((sgrid.m, grid.d) + grid.shape)
        return cls(sgrid, grid, z, z.copy(), 0)

    @classmethod
    def from_maps(cls, sgrid: SGrid, maps: list) -> "DiffeoFamily":
        grid = maps[0].grid
        return cls(sgrid, grid, np.stack([m.disp for m in maps]))

    def __len__(self):
        return self.sgrid.m

    def __getitem__(self, i: int) -> Diffeo:
        return Diffeo(self.grid, self.disp[i])

    def inverse(self, i: int) -> Diffeo:
        if i not in self._inverses:
            self._inverses[i] = self[i].inverse()
        return self._inverses[i]

    def inverse_residual(self, indices=None) -> float:
        """sup |phi_s o phi_s^{-1} - id| over the chosen samples (periodic distance)."""
        idx = range(self.sgrid.m) if indices is None else indices
        worst = 0.0
        for i in idx:
            comp = self[i].compose(self.inverse(i))
            worst = max(worst, comp.displacement_norm())
        return worst

    def pullback_curve(self, curve: FieldCurve, kind: str = "tensor") -> FieldCurve:
        vals = np.stack([self[i].pullback(curve.values[i], kind) for i in range(self.sgrid.m)])
        return FieldCurve(self.sgrid, self.grid, vals)


GeneratorSource = Union[FieldCurve, Callable[[float], np.ndarray]]


def _gen_at(gen: GeneratorSource, s: float) -> np.ndarray:
    if isinstance(gen, FieldCurve):
        return curve_at(gen, s)
    return np.asarray(gen(s), dtype=float)


def integrate_flow(generator: GeneratorSource, sgrid: SGrid, grid: TorusGrid, anchor: int = 0,
                   estimate_error: bool = False) -> DiffeoFamily:
    """Flow d/ds phi_s = X_s o phi_s with phi = id at the anchor sample.

    ``generator`` is a FieldCurve of vector fields on ``sgrid`` or a
    callable s -> field.  RK4 with the sample step; with ``estimate_error``
    the integration is repeated at half step and the sup difference is
    stored in ``meta['richardson']``.
    """
    x = grid.coords()

    def rhs(s, d):
        return interpolate(_gen_at(generator, s), grid, x + d)

    def sweep(substeps):
        disp = np.zeros((sgrid.m, grid.d) + grid.shape)
        s = sgrid.s
        for direction in (1, -1):
            d = np.zeros((grid.d,) + grid.shape)
            j = anchor
            while 0 <= j + direction < sgrid.m:
                h = (s[j + direction] - s[j]) / substeps
                t = s[j]
                for _ in range(substeps):
                    k1 = rhs(t, d)
                    k2 = rhs(t + h / 2, d + h / 2 * k1)
                    k3 = rhs(t + h / 2, d + h / 2 * k2)
                    k4 = rhs(t + h, d + h * k3)
                    d = d + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                    t += h
                j += direction
                disp[j] = d
        return disp

    disp = sweep(1)
    gens = None
    if isinstance(generator, FieldCurve):
        gens = generator.values
    else:
        gens = np.stack([_gen_at(generator, s) for s in sgrid.s])
    fam = DiffeoFamily(sgrid, grid, disp, gens, anchor)
    if estimate_error:
        fam.meta["richardson"] = float(np.abs(sweep(2) - disp).max())
    return fam


def _check_unit_volume(metric: MetricField, i: int, tol: float) -> None:
    if abs(metric.volume - 1.0) > tol:
        raise NotUnitVolume(f"sample {i} has volume {metric.volume:.12g}, expected 1")


def make_divergence_free(curve: FieldCurve, anchor: int = 0, tol: float = 1e-10,
                         volume_tol: float = 1e-8) -> tuple:
    """Pull a curve of unit-volume flat metrics into divergence-free gauge.

    At each sample the generator X_s solves the least-squares problem
    min ||gdot_s + L_X g_s|| (Killing-operator normal equations), so
    div(gdot_s + L_X g_s) = 0.  The flow of X_s then gives phi_s and the
    gauged curve phi_s^* g_s, whose derivative phi_s^*(gdot_s + L_X g_s)
    is stored analytically.  Returns (gauged curve, DiffeoFamily).
    """
    grid = curve.grid
    gdot = s_derivative(curve).values
    m = curve.sgrid.m
    gens = np.empty((m, grid.d) + grid.shape)
    resid = np.empty_like(gdot)
    iters = []
    y = None
    for i in range(m):
        metric = MetricField(curve.values[i], grid)
        _check_unit_volume(metric, i, volume_tol)
        op = VectorLie(metric, conformal=False)
        sol = op.solve_normal(gdot[i], tol=tol, x0=y)
        iters.append(sol.iterations)
        y = sol.x
        gens[i] = -raise_index(metric, y)
        resid[i] = gdot[i] - op.operator(y)
    gen_curve = FieldCurve(curve.sgrid, grid, gens)
    fam = integrate_flow(gen_curve, curve.sgrid, grid, anchor)
    vals = np.stack([fam[i].pullback(curve.values[i]) for i in range(m)])
    ders = np.stack([fam[i].pullback(resid[i]) for i in range(m)])
    fam.meta["cg_iterations"] = iters
    return FieldCurve(curve.sgrid, grid, vals, ders, None, {"gauge": fam}), fam


def transformed_curve(metric_curve: FieldCurve, rho, family: DiffeoFamily, scaling: Callable[[float], float],
                      scaling_deriv: Optional[Callable[[float], float]] = None) -> tuple:
    """(c_s phi_s^* g_s, phi_s^* rho_s) with the analytic s-derivative of the metric.

    The derivative is c' phi^* g + c phi^*(gdot + L_X g) with X the
    generator of the family.  ``rho`` may be a FieldCurve or one field.
    """
    grid = metric_curve.grid
    gdot = s_derivative(metric_curve).values
    sg = metric_curve.sgrid
    if scaling_deriv is None:
        h = 1e-5
        scaling_deriv = lambda s: (scaling(s + h) - scaling(s - h)) / (2 * h)  # noqa: E731
    gens = family.generators if family.generators is not None else np.zeros((sg.m, grid.d) + grid.shape)
    rho_vals = rho.values if isinstance(rho, FieldCurve) else np.broadcast_to(np.asarray(rho), (sg.m,) + grid.shape)
    vals, ders, rhos = [], [], []
    for i, s in enumerate(sg.s):
        metric = MetricField(metric_curve.values[i], grid)
        phi = family[i]
        c, dc = scaling(s), scaling_deriv(s)
        pg = phi.pullback(metric_curve.values[i])
        t = gdot[i] + lie_metric(metric, gens[i])
        vals.append(c * pg)
        ders.append(dc * pg + c * phi.pullback(t))
        rhos.append(phi.pullback(rho_vals[i], "scalar"))
    return (FieldCurve(sg, grid, np.stack(vals), np.stack(ders)),
            FieldCurve(sg, grid, np.stack(rhos)))


def _div_vector(metric: MetricField, x: np.ndarray) -> np.ndarray:
    mu = metric.sqrtdet
    return np.einsum("ii...->...", gradient(mu * x, metric.grid)) / mu


def change_hypersurface(pp, f, anchor: int = 0):
    """Re-slice a pp-wave along v -> v + f(s, x).

    The transverse maps phi_s flow along -grad f_s (identity at the
    anchor sample).  The new metric has lapse coefficient
    phi_s^*(u^{-2} + 2 fdot - |df|^2) and spatial part phi_s^* g_s; it is
    isometric to the input.  ``f`` is a FieldCurve of scalars (its
    s-derivative is taken from the curve, by finite differences if no
    derivative samples are attached).

    The rate d/ds tr gdot of the new curve is carried through the
    transformation law phi_s^*(Tdot + X(T)) with T = tr gdot + 2 div X,
    which avoids differencing the flowed samples in s.
    """
    from .ppwave import PPWaveMetric, trace_rate

    sg, grid = pp.sgrid, pp.grid
    fdot = s_derivative(f).values
    gdot = s_derivative(pp.g).values
    gens = np.empty((sg.m, grid.d) + grid.shape)
    coeff = np.empty((sg.m,) + grid.shape)
    T = np.empty((sg.m,) + grid.shape)
    div_rate = np.empty((sg.m,) + grid.shape)
    for i in range(sg.m):
        metric = MetricField(pp.g.values[i], grid)
        df = gradient(f.values[i], grid)
        gens[i] = -raise_index(metric, df)
        w = pp.u.values[i] ** -2
        coeff[i] = w + 2 * fdot[i] - np.einsum("ij...,i...,j...->...", metric.ginv, df, df)
        tr = trace(metric, gdot[i])
        T[i] = tr + 2 * _div_vector(metric, gens[i])
        # d/ds div X = div Xdot + X(tr gdot)/2 with Xdot = g^-1 gdot g^-1 df - g^-1 d fdot
        ginv = metric.ginv
        xdot = np.einsum("ia...,ab...,bj...,j...->i...", ginv, gdot[i], ginv, df) - raise_index(metric, gradient(fdot[i], grid))
        div_rate[i] = _div_vector(metric, xdot) + 0.5 * np.einsum("i...,i...->...", gens[i], gradient(tr, grid))
    Tdot = trace_rate(pp) + 2 * div_rate
    fam = integrate_flow(FieldCurve(sg, grid, gens), sg, grid, anchor)
    new_w, new_g, new_gd, rate = [], [], [], []
    for i in range(sg.m):
        metric = MetricField(pp.g.values[i], grid)
        phi = fam[i]
        new_w.append(phi.pullback(coeff[i], "scalar"))
        new_g.append(phi.pullback(pp.g.values[i]))
        new_gd.append(phi.pullback(gdot[i] + lie_metric(metric, gens[i])))
        adv = np.einsum("i...,i...->...", gens[i], gradient(T[i], grid))
        rate.append(phi.pullback(Tdot[i] + adv, "scalar"))
    new_w = np.stack(new_w)
    if new_w.min() <= 0:
        raise FlowError("re-sliced lapse coefficient is not positive; the new slice is not spacelike")
    u = FieldCurve(sg, grid, new_w ** -0.5)
    g = FieldCurve(sg, grid, np.stack(new_g), np.stack(new_gd))
    out = PPWaveMetric(sg, grid, u, g, meta={"slice_family": fam, "parent": pp}, trace_rate=np.stack(rate))
    return out, fam


def solve_hamilton_jacobi(pp, anchor: int = 0, threshold: float = FOCAL_THRESHOLD) -> FieldCurve:
    """Solve 2 df/ds = 1 - u^{-2} + |df|^2 with f = 0 at the anchor sample.

    The s-derivative samples of the returned curve are the equation's
    right-hand side.  RK4 in s with the sample step; the lapse and metric between samples
    come from :func:`~pptorus.families.curve_at`.  Raises
    :class:`FocalPointError` once sup |df| exceeds ``threshold``.
    """
    sg, grid = pp.sgrid, pp.grid

    def rhs(s, f):
        g = MetricField(curve_at(pp.g, s), grid, check=False)
        w = curve_at(pp.u, s) ** -2
        df = gradient(f, grid)
        return 0.5 * (1.0 - w + np.einsum("ij...,i...,j...->...", g.ginv, df, df))

    vals = np.zeros((sg.m,) + grid.shape)
    rates = np.zeros_like(vals)
    s = sg.s
    for direction in (1, -1):
        f = np.zeros(grid.shape)
        rates[anchor] = rhs(s[anchor], f)
        j = anchor
        while 0 <= j + direction < sg.m:
            h = s[j + direction] - s[j]
            t = s[j]
            k1 = rhs(t, f)
            k2 = rhs(t + h / 2, f + h / 2 * k1)
            k3 = rhs(t + h / 2, f + h / 2 * k2)
            k4 = rhs(t + h, f + h * k3)
            f = f + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            j += direction
            gn = float(np.abs(gradient(f, grid)).max())
            if not np.isfinite(gn) or gn > threshold:
                raise FocalPointError(float(s[j - direction]), gn)
            vals[j] = f
            rates[j] = rhs(s[j], f)
    return FieldCurve(sg, grid, vals, rates)


def geodesic_gauge(pp, anchor: int = 0, threshold: float = FOCAL_THRESHOLD):
    """Re-slice so that the lapse is identically one.

    Returns (new PPWaveMetric, f curve, DiffeoFamily).
    """
    f = solve_hamilton_jacobi(pp, anchor, threshold)
    out, fam = change_hypersurface(pp, f, anchor)
    return out, f, fam
