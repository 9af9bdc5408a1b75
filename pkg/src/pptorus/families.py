"""Analytic s-families of fields and continuous evaluation of sampled curves.

A :class:`CurveModel` carries closed-form callables for a field and its
first two s-derivatives.  Sampling a model yields a :class:`FieldCurve`
that remembers the model, so downstream code (finite-difference oracles,
spinor transport) can evaluate the family between samples exactly.  For
curves without a model, :func:`curve_at` falls back to local Lagrange
interpolation of the samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

from .torus import FieldCurve, SGrid, TorusGrid, gradient, lagrange_eval, s_derivative

__all__ = [
    "CurveModel",
    "curve_at",
    "constant_metric",
    "diagonal_exponential",
    "periodic_diagonal",
    "pullback_family",
    "displacement_field",
    "scalar_modes",
    "constant_scalar",
]


@dataclass
class CurveModel:
    """Closed-form family s -> field with optional first and second derivatives."""

    grid: TorusGrid
    value: Callable[[float], np.ndarray]
    deriv: Optional[Callable[[float], np.ndarray]] = None
    deriv2: Optional[Callable[[float], np.ndarray]] = None
    name: str = "model"
    params: dict = field(default_factory=dict)

    def at(self, s: float, order: int = 0) -> np.ndarray:
        fn = (self.value, self.deriv, self.deriv2)[order]
        if fn is None:
            raise ValueError(f"model '{self.name}' has no derivative of order {order}")
        return np.asarray(fn(float(s)), dtype=float)

    def sample(self, sgrid: SGrid) -> FieldCurve:
        vals = np.stack([self.at(s) for s in sgrid.s])
        d1 = None if self.deriv is None else np.stack([self.at(s, 1) for s in sgrid.s])
        d2 = None if self.deriv2 is None else np.stack([self.at(s, 2) for s in sgrid.s])
        return FieldCurve(sgrid, self.grid, vals, d1, d2, {"model": self})


def curve_at(curve: FieldCurve, s: float, order: int = 0) -> np.ndarray:
    """Value (order 0) or s-derivative (order 1, 2) of a curve at any s.

    Uses the attached closed-form model when there is one, otherwise
    eight-point Lagrange interpolation of the stored samples (derivative
    samples are taken from the curve or by finite differences).
    """
    model = curve.meta.get("model")
    if model is not None:
        try:
            return model.at(s, order)
        except ValueError:
            pass
    if order == 0:
        samples = curve.values
    elif order == 1:
        samples = curve.deriv if curve.deriv is not None else s_derivative(curve).values
    elif order == 2:
        if curve.deriv2 is not None:
            samples = curve.deriv2
        else:
            first = curve.deriv if curve.deriv is not None else s_derivative(curve).values
            samples = s_derivative(first, curve.sgrid.ds)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return lagrange_eval(samples, curve.sgrid, s)


def _tile(mat: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.broadcast_to(mat[(...,) + (None,) * grid.d], mat.shape + grid.shape).copy()


def constant_metric(grid: TorusGrid, matrix=None) -> CurveModel:
    m = np.eye(grid.d) if matrix is None else np.asarray(matrix, dtype=float)
    zero = np.zeros_like(m)
    return CurveModel(
        grid,
        lambda s: _tile(m, grid),
        lambda s: _tile(zero, grid),
        lambda s: _tile(zero, grid),
        "constant",
        {"matrix": m.tolist()},
    )


def diagonal_exponential(grid: TorusGrid, rates) -> CurveModel:
    """g_s = diag(exp(r_1 s), ..., exp(r_d s)); unit volume iff the rates sum to 0."""
    r = np.asarray(rates, dtype=float)
    if r.shape != (grid.d,):
        raise ValueError(f"need {grid.d} rates, got {r.shape}")
    return CurveModel(
        grid,
        lambda s: _tile(np.diag(np.exp(r * s)), grid),
        lambda s: _tile(np.diag(r * np.exp(r * s)), grid),
        lambda s: _tile(np.diag(r * r * np.exp(r * s)), grid),
        "diagonal-exponential",
        {"rates": r.tolist()},
    )


def periodic_diagonal(grid: TorusGrid, eps: float, period: float = 2 * np.pi) -> CurveModel:
    """g_s = diag(e^{a(s)}, e^{-a(s)}, 1, ...) with a(s) = 2 eps sin(2 pi s / period)."""
    if grid.d < 2:
        raise ValueError("periodic-diagonal needs d >= 2")
    w = 2 * np.pi / period
    sgn = np.zeros(grid.d)
    sgn[0], sgn[1] = 1.0, -1.0

    def a(s, k):
        return 2 * eps * (np.sin(w * s), w * np.cos(w * s), -w * w * np.sin(w * s))[k]

    def val(s):
        return _tile(np.diag(np.exp(sgn * a(s, 0))), grid)

    def d1(s):
        return _tile(np.diag(sgn * a(s, 1) * np.exp(sgn * a(s, 0))), grid)

    def d2(s):
        e = np.exp(sgn * a(s, 0))
        return _tile(np.diag((sgn * a(s, 2) + (sgn * a(s, 1)) ** 2) * e), grid)

    return CurveModel(grid, val, d1, d2, "periodic-diagonal", {"eps": eps, "period": period})


def displacement_field(grid: TorusGrid, kind: str) -> np.ndarray:
    """A smooth periodic vector field used to build diffeomorphisms x -> x + a F(x)."""
    x = grid.coords()
    tp = 2 * np.pi
    if kind == "gradient":
        # F = grad(sin 2 pi x^1 + cos 2 pi x^d) / (2 pi)
        f = np.zeros((grid.d,) + grid.shape)
        f[0] += np.cos(tp * x[0])
        f[-1] -= np.sin(tp * x[-1])
        return f
    if kind == "shear":
        f = np.zeros((grid.d,) + grid.shape)
        for a in range(grid.d):
            f[a] = np.sin(tp * x[(a + 1) % grid.d]) / tp
        return f
    raise ValueError(f"unknown generator field '{kind}' (expected 'gradient' or 'shear')")


def pullback_family(base: CurveModel, kind: str, amplitude: float, moving: bool = True) -> CurveModel:
    """g_s = psi_s^* G_s with psi_s(x) = x + a(s) F(x) and G_s an x-independent base.

    With ``moving`` the displacement grows linearly, a(s) = amplitude * s;
    otherwise it is the fixed amplitude, so the family stays a solution of
    the j-equation whenever the base is.
    """
    grid = base.grid
    origin = (...,) + (0,) * grid.d
    g0 = base.at(0.0)
    if np.abs(g0 - g0[origin][(...,) + (None,) * grid.d]).max() > 0:
        raise ValueError("pullback families need an x-independent base curve")
    F = displacement_field(grid, kind)
    dFt = np.swapaxes(gradient(F, grid), 0, 1)  # dFt[a, i] = d_i F^a
    eye = np.eye(grid.d)[(...,) + (None,) * grid.d]
    if not moving and abs(amplitude) * np.abs(dFt).max() * grid.d >= 1:
        raise ValueError("amplitude too large: the map would not be a diffeomorphism")
    rates = (amplitude, 0.0, 0.0) if not moving else None

    def a(s, k):
        if rates is not None:
            return rates[k]
        return (amplitude * s, amplitude, 0.0)[k]

    def jac(s, k):
        return (eye if k == 0 else 0.0) + a(s, k) * dFt

    def combo(s, order):
        out = 0.0
        for p in range(order + 1):
            for q in range(order + 1 - p):
                r = order - p - q
                coef = comb(order, p) * comb(order - p, q)
                gq = base.at(s, q)[origin]
                out = out + coef * np.einsum("ai...,ab,bj...->ij...", jac(s, p), gq, jac(s, r))
        return out

    return CurveModel(
        grid,
        lambda s: combo(s, 0),
        None if base.deriv is None else (lambda s: combo(s, 1)),
        None if base.deriv2 is None else (lambda s: combo(s, 2)),
        "pullback",
        {"base": base.name, "field": kind, "amplitude": amplitude, "moving": moving},
    )


def scalar_modes(grid: TorusGrid, constant: float = 0.0, modes=()) -> CurveModel:
    """s-independent scalar c + sum_m amp_m * trig(2 pi k_m . x).

    Each mode is a mapping with keys ``amp``, ``k`` (integer wave vector)
    and ``kind`` ('sin' or 'cos').
    """
    x = grid.coords()
    f = np.full(grid.shape, float(constant))
    for m in modes:
        k = np.asarray(m["k"], dtype=float)
        phase = 2 * np.pi * np.tensordot(k, x, axes=(0, 0))
        trig = np.sin if m.get("kind", "sin") == "sin" else np.cos
        f = f + float(m["amp"]) * trig(phase)
    zero = np.zeros(grid.shape)
    return CurveModel(grid, lambda s: f, lambda s: zero, lambda s: zero, "fourier-modes",
                      {"constant": constant, "modes": [dict(m) for m in modes]})


def constant_scalar(grid: TorusGrid, c: float) -> CurveModel:
    return scalar_modes(grid, c, ())
