"""The leaf-volume scale factor and its second-order linear ODE.

For a curve of flat metrics g_s with density profile rho_s the functionals

    P_s = mean of rho_s,    Sigma_s = mean of |sigma_s|^2,

(sigma_s the TT-part of the s-derivative of g_s) drive the ODE

    lambda'' = -(P + Sigma / 4) lambda / d.

This module computes (P, Sigma), integrates the ODE with RK4 on the
sample grid (coefficient interpolated by a cubic spline), locates zeros
and checks the Sturm-type spacing bounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .riemann import MetricField, sym_norm2
from .tensor_split import tt_solve
from .torus import FieldCurve, SGrid, integrate, s_derivative

__all__ = [
    "ScaleData",
    "LambdaSolution",
    "ZeroSpacingReport",
    "compute_scale_data",
    "solve_lambda",
    "solution_basis",
    "wronskian",
    "check_zero_spacing",
    "check_invariance",
    "first_zero",
    "write_csv",
]

ZERO_TOL = 1e-12


@dataclass
class ScaleData:
    """Samples of P and Sigma on an s-grid; ``d`` is the leaf dimension."""

    sgrid: SGrid
    P: np.ndarray
    Sigma: np.ndarray
    d: int

    def __post_init__(self):
        if np.any(self.Sigma < -1e-12):
            raise ValueError("Sigma must be nonnegative")

    @property
    def coefficient(self) -> np.ndarray:
        """(P + Sigma/4) / d at the samples."""
        return (self.P + 0.25 * self.Sigma) / self.d

    def coefficient_fn(self) -> Callable[[float], float]:
        spline = CubicSpline(self.sgrid.s, self.coefficient)
        return lambda s: float(spline(s))


def _mean(metric: MetricField, f: np.ndarray) -> float:
    return float(integrate(f, metric.grid, metric.sqrtdet) / metric.volume)


def compute_scale_data(metric_curve: FieldCurve, rho, tol: float = 1e-10) -> ScaleData:
    """P and Sigma for a flat metric curve and a density profile.

    ``rho`` is a FieldCurve of scalars, a plain array with samples along
    axis 0, or a single s-independent scalar field.
    """
    grid = metric_curve.grid
    rho_vals = rho.values if isinstance(rho, FieldCurve) else np.asarray(rho, dtype=float)
    if rho_vals.shape == grid.shape:
        rho_vals = np.broadcast_to(rho_vals, (metric_curve.sgrid.m,) + grid.shape)
    gdot = s_derivative(metric_curve).values
    m = metric_curve.sgrid.m
    P = np.empty(m)
    Sigma = np.empty(m)
    y = None
    for i in range(m):
        metric = MetricField(metric_curve.values[i], grid)
        P[i] = _mean(metric, rho_vals[i])
        # neighbouring samples warm-start the conformal solve
        sigma, y = tt_solve(metric, gdot[i], tol, y)
        Sigma[i] = _mean(metric, sym_norm2(metric, sigma))
    return ScaleData(metric_curve.sgrid, P, np.maximum(Sigma, 0.0), grid.d)


def _rk4_step(q: Callable[[float], float], s: float, y: np.ndarray, h: float) -> np.ndarray:
    def f(t, z):
        return np.array([z[1], -q(t) * z[0]])

    k1 = f(s, y)
    k2 = f(s + h / 2, y + h / 2 * k1)
    k3 = f(s + h / 2, y + h / 2 * k2)
    k4 = f(s + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(q, s_from: float, y: np.ndarray, s_to: float, h: float) -> np.ndarray:
    n = max(1, int(np.ceil(abs(s_to - s_from) / h - 1e-9)))
    step = (s_to - s_from) / n
    s = s_from
    for _ in range(n):
        y = _rk4_step(q, s, y, step)
        s += step
    return y


@dataclass
class LambdaSolution:
    """A solution of the scale ODE sampled on the data's s-grid."""

    data: ScaleData
    lam: np.ndarray
    lamdot: np.ndarray
    s_star: float
    initial: tuple
    zeros: list = field(default_factory=list)
    q: Optional[Callable[[float], float]] = None

    @property
    def sgrid(self) -> SGrid:
        return self.data.sgrid

    def at(self, s: float) -> tuple:
        """(lambda, lambda', lambda'') at any s, integrating from the nearest node."""
        i = self.sgrid.index(s)
        s_i = float(self.sgrid.s[i])
        y = np.array([self.lam[i], self.lamdot[i]])
        if s != s_i:
            y = _integrate(self.q, s_i, y, s, self.sgrid.ds)
        return float(y[0]), float(y[1]), float(-self.q(s) * y[0])

    def components(self) -> list:
        """Index ranges (i0, i1) of the connected components of I minus the zeros."""
        s = self.sgrid.s
        cuts = [0]
        for z in self.zeros:
            cuts.append(int(np.searchsorted(s, z)))
        cuts.append(len(s))
        out = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            i0, i1 = a, b - 1
            # drop samples that sit on a zero
            while i0 <= i1 and abs(self.lam[i0]) < ZERO_TOL:
                i0 += 1
            while i1 >= i0 and abs(self.lam[i1]) < ZERO_TOL:
                i1 -= 1
            if i1 - i0 + 1 >= 9:
                out.append((i0, i1))
        return out

    def component_containing(self, s: float) -> tuple:
        for i0, i1 in self.components():
            if self.sgrid.s[i0] <= s <= self.sgrid.s[i1]:
                return i0, i1
        raise ValueError(f"s = {s} is not inside a zero-free component with at least 9 samples")


def solve_lambda(data: ScaleData, s_star: float, lam0: float, lamdot0: float, q=None) -> LambdaSolution:
    """Integrate the scale ODE from (lambda, lambda')(s_star) over the whole grid.

    ``q`` overrides the coefficient function (P + Sigma/4)/d, which by
    default is the cubic spline through the samples.
    """
    if lam0 == 0 and lamdot0 == 0:
        raise ValueError("initial data (0, 0) gives the zero solution")
    sg = data.sgrid
    if not sg.s0 - 1e-12 <= s_star <= sg.s1 + 1e-12:
        raise ValueError("s_star lies outside the s-interval")
    q = q or data.coefficient_fn()
    s = sg.s
    lam = np.empty(sg.m)
    lamdot = np.empty(sg.m)
    i = int(np.searchsorted(s, s_star))
    # forward sweep
    y = np.array([lam0, lamdot0], dtype=float)
    pos = s_star
    for j in range(i, sg.m):
        y = _integrate(q, pos, y, s[j], sg.ds) if s[j] != pos else y
        pos = s[j]
        lam[j], lamdot[j] = y
    y = np.array([lam0, lamdot0], dtype=float)
    pos = s_star
    for j in range(i - 1, -1, -1):
        y = _integrate(q, pos, y, s[j], sg.ds)
        pos = s[j]
        lam[j], lamdot[j] = y
    sol = LambdaSolution(data, lam, lamdot, float(s_star), (float(lam0), float(lamdot0)), [], q)
    sol.zeros = _find_zeros(sol)
    return sol


def _find_zeros(sol: LambdaSolution) -> list:
    s = sol.sgrid.s
    lam = sol.lam
    zeros = []
    for j in range(len(s) - 1):
        if lam[j] == 0.0:
            zeros.append(float(s[j]))
            continue
        if lam[j] * lam[j + 1] < 0:
            a, b = float(s[j]), float(s[j + 1])
            fa = lam[j]
            while b - a > ZERO_TOL:
                mid = 0.5 * (a + b)
                fm = sol.at(mid)[0]
                if fm == 0.0:
                    a = b = mid
                    break
                if (fm > 0) == (fa > 0):
                    a, fa = mid, fm
                else:
                    b = mid
            zeros.append(0.5 * (a + b))
    if lam[-1] == 0.0:
        zeros.append(float(s[-1]))
    return zeros


def solution_basis(data: ScaleData, s_star: float) -> tuple:
    """The two solutions with initial data (1, 0) and (0, 1) at s_star."""
    return solve_lambda(data, s_star, 1.0, 0.0), solve_lambda(data, s_star, 0.0, 1.0)


def wronskian(a: LambdaSolution, b: LambdaSolution) -> np.ndarray:
    return a.lam * b.lamdot - a.lamdot * b.lam


@dataclass
class ZeroSpacingReport:
    ok: bool
    zeros: list
    min_spacing: Optional[float]
    max_component: Optional[float]
    violations: list
    notes: list

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "zeros": self.zeros,
            "min_spacing": self.min_spacing,
            "max_component": self.max_component,
            "violations": self.violations,
            "notes": self.notes,
        }


def check_zero_spacing(sol: LambdaSolution, C: Optional[float] = None, c: Optional[float] = None,
                       whole_line: bool = False, rtol: float = 1e-9) -> ZeroSpacingReport:
    """Check the comparison bounds on the zero set of a solution.

    With an upper bound C >= sup of the coefficient, consecutive zeros are
    at least pi/sqrt(C) apart (at most one zero when C = 0).  With a lower
    bound c > 0, zero-free components are at most pi/sqrt(c) long; interior
    components are measured between zeros, end components are only
    checked when they are long enough to be decisive.  With c = 0 and
    ``whole_line`` (periodic data extended to the line) a zero must exist
    unless the coefficient vanishes identically.
    """
    coef = sol.data.coefficient
    zeros = list(sol.zeros)
    violations = []
    notes = []
    if C is not None and coef.max() > C * (1 + rtol) + rtol:
        notes.append(f"supplied C = {C} is below sup coefficient {coef.max():.6g}")
    if c is not None and coef.min() < c * (1 - rtol) - rtol:
        notes.append(f"supplied c = {c} is above inf coefficient {coef.min():.6g}")
    spacings = np.diff(zeros) if len(zeros) > 1 else np.array([])
    min_spacing = float(spacings.min()) if spacings.size else None
    if C is not None:
        if C > 0:
            bound = np.pi / np.sqrt(C)
            for a, b in zip(zeros[:-1], zeros[1:]):
                if b - a < bound * (1 - rtol):
                    violations.append({"kind": "spacing", "pair": [a, b], "distance": b - a, "bound": bound})
        elif len(zeros) > 1:
            violations.append({"kind": "spacing", "pair": zeros[:2], "distance": zeros[1] - zeros[0], "bound": None})
    sg = sol.sgrid
    edges = [sg.s0] + zeros + [sg.s1]
    lengths = np.diff(edges)
    max_component = float(lengths.max())
    if c is not None and c > 0:
        bound = np.pi / np.sqrt(c)
        for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            if b - a > bound * (1 + rtol):
                violations.append({"kind": "component", "interval": [a, b], "length": b - a, "bound": bound})
    if c is not None and c == 0 and whole_line and not zeros:
        if np.abs(coef).max() > rtol:
            violations.append({"kind": "missing-zero", "detail": "coefficient not identically zero but no zero found"})
        else:
            notes.append("coefficient vanishes identically; constant solutions are allowed")
    return ZeroSpacingReport(not violations, zeros, min_spacing, max_component, violations, notes)


def first_zero(q: Callable[[float], float], lam0: float, lamdot0: float, s0: float = 0.0,
               s_max: float = 1e4, h: float = 0.01) -> Optional[float]:
    """First zero of the solution in s > s0 (bisection to 1e-12), or None up to s_max."""
    y = np.array([lam0, lamdot0], dtype=float)
    s = s0
    while s < s_max:
        y_new = _rk4_step(q, s, y, h)
        if y[0] != 0 and y[0] * y_new[0] <= 0:
            a, b, ya = s, s + h, y
            while b - a > ZERO_TOL:
                mid = 0.5 * (a + b)
                ym = _integrate(q, a, ya, mid, h)
                if ym[0] == 0 or (ym[0] > 0) != (ya[0] > 0):
                    b = mid
                else:
                    a, ya = mid, ym
            return 0.5 * (a + b)
        y = y_new
        s += h
    return None


def check_invariance(metric_curve: FieldCurve, rho: FieldCurve, family, scaling: Callable[[float], float],
                     scaling_deriv: Optional[Callable[[float], float]] = None, tol: float = 1e-10) -> dict:
    """Recompute (P, Sigma) for (c_s phi_s^* g_s, phi_s^* rho_s) and compare.

    ``family`` is a :class:`~pptorus.gauge.DiffeoFamily` on the same s-grid.
    The derivative of the transformed curve is formed analytically from the
    generator of the family.
    """
    from .gauge import transformed_curve

    base = compute_scale_data(metric_curve, rho, tol)
    new_curve, new_rho = transformed_curve(metric_curve, rho, family, scaling, scaling_deriv)
    other = compute_scale_data(new_curve, new_rho, tol)
    return {
        "P": float(np.abs(base.P - other.P).max()),
        "Sigma": float(np.abs(base.Sigma - other.Sigma).max()),
    }


def write_csv(sol: LambdaSolution, path) -> Path:
    """Write (s, lambda, lambda', P, Sigma) rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "lambda", "lambda_dot", "P", "Sigma"])
        for row in zip(sol.sgrid.s, sol.lam, sol.lamdot, sol.data.P, sol.data.Sigma):
            w.writerow([repr(float(v)) for v in row])
    return path
