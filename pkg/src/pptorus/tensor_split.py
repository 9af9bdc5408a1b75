"""Splitting symmetric 2-tensors on flat tori.

Every symmetric 2-tensor h on a closed Ricci-flat manifold can be written
uniquely as

    h = u g + nabla^2 f + L_X g + sigma

with f of mean zero, X divergence free and orthogonal to the Killing
fields, and sigma transverse traceless (TT).  When h solves the j-equation
div h - d tr h = 0, the function u is a constant c and X is a Killing
field, so h = c g + nabla^2 f + sigma.

Numerically the TT part is obtained first as the residual of a weighted
least-squares fit of the trace-free part of h by the conformal Killing
operator; the potential f and the field X then come from one scalar
Poisson solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import ScalarLaplace, VectorLie
from .riemann import (
    MetricField,
    divergence,
    hessian,
    l2_inner,
    lichnerowicz,
    lie_metric,
    lower,
    raise_index,
    ricci,
    sym_norm2,
    trace,
)
from .torus import gradient, integrate

__all__ = [
    "NotFlatError",
    "JEquationViolation",
    "TensorSplit",
    "JSplit",
    "decompose",
    "split_j_solution",
    "tt_part",
    "tt_solve",
    "killing_basis",
]

FLATNESS_TOL = 1e-8


class NotFlatError(ValueError):
    """The splitting is only available for Ricci-flat (hence flat) tori."""


class JEquationViolation(ValueError):
    """A tensor offered as a j-equation solution has a large j-residual."""

    def __init__(self, residual: float, tol: float):
        super().__init__(f"j-residual {residual:.3e} exceeds tolerance {tol:.1e}")
        self.residual = residual


@dataclass
class TensorSplit:
    """Components of h = u g + nabla^2 f + L_X g + sigma."""

    metric: MetricField
    u: np.ndarray
    f: np.ndarray
    x: np.ndarray
    sigma: np.ndarray
    cg_iterations: dict = field(default_factory=dict)

    @property
    def c(self) -> float:
        """Volume mean of the scalar part (the constant for j-solutions)."""
        m = self.metric
        return float(integrate(self.u, m.grid, m.sqrtdet) / m.volume)

    @property
    def scalar_part(self) -> np.ndarray:
        return self.u * self.metric.g

    @property
    def hessian_part(self) -> np.ndarray:
        return hessian(self.metric, self.f)

    @property
    def lie_part(self) -> np.ndarray:
        return lie_metric(self.metric, self.x)

    def parts(self) -> dict:
        return {
            "scalar": self.scalar_part,
            "hessian": self.hessian_part,
            "lie": self.lie_part,
            "tt": self.sigma,
        }

    def orthogonal_parts(self) -> dict:
        """The same split with the trace of the Hessian moved into the scalar part.

        u g and nabla^2 f are not L^2-orthogonal (their product is
        -int u Delta f); after the shift the four summands are pairwise
        orthogonal and still sum to h.
        """
        m = self.metric
        hess = self.hessian_part
        t = trace(m, hess) / m.d
        return {
            "scalar": (self.u + t) * m.g,
            "hessian": hess - t * m.g,
            "lie": self.lie_part,
            "tt": self.sigma,
        }

    def reconstruct(self) -> np.ndarray:
        return sum(self.parts().values())

    def residuals(self, h: np.ndarray) -> dict:
        """Sup-norm and L^2 diagnostics of the splitting of ``h``.

        Orthogonality entries are L^2 products of the orthogonal
        presentation normalised by ||h||^2; ``scalar_hessian_raw`` is the
        (generally nonzero) product of u g with nabla^2 f.
        """
        m = self.metric
        parts = self.orthogonal_parts()
        hn2 = max(l2_inner(m, h, h), 1e-300)
        out = {
            "reconstruction": float(np.abs(self.reconstruct() - h).max()),
            "tt_trace": float(np.abs(trace(m, self.sigma)).max()),
            "tt_divergence": float(np.abs(divergence(m, self.sigma)).max()),
            "x_divergence": float(np.abs(_div_vector(m, self.x)).max()),
        }
        names = list(parts)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                key = f"orth_{names[a]}_{names[b]}"
                out[key] = abs(l2_inner(m, parts[names[a]], parts[names[b]])) / hn2
        out["scalar_hessian_raw"] = abs(l2_inner(m, self.scalar_part, self.hessian_part)) / hn2
        return out

    def lichnerowicz_residual(self) -> float:
        """sup |Delta_L sigma|; a diagnostic, not a gate."""
        return float(np.abs(lichnerowicz(self.metric, self.sigma)).max())


@dataclass
class JSplit:
    """Three-term form h = c g + nabla^2 f + sigma of a j-equation solution."""

    c: float
    f: np.ndarray
    sigma: np.ndarray
    lie_norm: float
    scalar_variation: float
    j_residual: float
    split: TensorSplit

    def as_tuple(self):
        return self.c, self.f, self.sigma

    def three_term_residual(self, h: np.ndarray) -> float:
        """sup |c g + nabla^2 f + sigma - h|."""
        m = self.split.metric
        return float(np.abs(self.c * m.g + hessian(m, self.f) + self.sigma - h).max())


def _div_vector(metric: MetricField, x: np.ndarray) -> np.ndarray:
    # (1/mu) d_i (mu X^i): the divergence in the form the Poisson solve uses
    flux = metric.sqrtdet * x
    return np.einsum("ii...->...", gradient(flux, metric.grid)) / metric.sqrtdet


def check_flat(metric: MetricField, tol: float = FLATNESS_TOL) -> float:
    res = float(np.abs(ricci(metric)).max())
    if res > tol:
        raise NotFlatError(f"metric is not Ricci-flat: sup|ric| = {res:.3e} > {tol:.1e}")
    return res


def killing_basis(metric: MetricField, tol: float = 1e-10) -> np.ndarray:
    """An L^2-orthonormal basis of Killing fields (as vectors) of a flat metric.

    For constant-coefficient metrics these are the coordinate translations.
    Otherwise each translation is corrected by the least-squares solution
    of L_W g = L_{e_a} g, which leaves the Killing field e_a - W.
    """
    grid = metric.grid
    d = grid.d
    basis = []
    op = None if metric.is_constant else VectorLie(metric, conformal=False)
    for a in range(d):
        e = np.zeros((d,) + grid.shape)
        e[a] = 1.0
        if op is not None:
            ef = lower(metric, e)
            w = op.solve_normal(op.operator(ef), tol=tol).x
            e = raise_index(metric, ef - w)
        basis.append(e)
    # Gram-Schmidt in the L^2 product g(X, Y) dvol
    out = []
    for z in basis:
        for q in out:
            z = z - _vec_inner(metric, z, q) * q
        out.append(z / np.sqrt(_vec_inner(metric, z, z)))
    return np.array(out)


def _vec_inner(metric: MetricField, x: np.ndarray, y: np.ndarray) -> float:
    pt = np.einsum("ij...,i...,j...->...", metric.g, x, y)
    return float(integrate(pt, metric.grid, metric.sqrtdet))


def tt_part(metric: MetricField, h: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """TT-projection of h (the sigma of :func:`decompose`).

    Only the conformal-Killing solve is needed; the scalar and Killing
    steps of the full split do not touch sigma.
    """
    return tt_solve(metric, h, tol)[0]


def tt_solve(metric: MetricField, h: np.ndarray, tol: float = 1e-10, x0=None) -> tuple:
    """(sigma, Y) with h0 = L_conf Y + sigma; ``x0`` warm-starts the solve for Y."""
    metric.grid.check(h)
    h = 0.5 * (h + np.swapaxes(h, 0, 1))
    h0 = h - trace(metric, h) / metric.grid.d * metric.g
    conf = VectorLie(metric, conformal=True)
    y = conf.solve_normal(h0, tol=tol, x0=x0).x
    return h0 - conf.operator(y), y


def decompose(metric: MetricField, h: np.ndarray, tol: float = 1e-10, check: bool = True) -> TensorSplit:
    """Split h = u g + nabla^2 f + L_X g + sigma on a flat torus.

    CG tolerances are relative residuals; the iteration cap is 10 N^d.
    Raises :class:`NotFlatError` if the metric is not Ricci-flat and
    :class:`~pptorus.elliptic.ConvergenceError` if a solve stalls.
    """
    grid = metric.grid
    grid.check(h)
    if check:
        check_flat(metric)
    d = grid.d
    h = 0.5 * (h + np.swapaxes(h, 0, 1))
    tau = trace(metric, h) / d
    h0 = h - tau * metric.g
    conf = VectorLie(metric, conformal=True)
    ysol = conf.solve_normal(h0, tol=tol)
    y = ysol.x
    ly = conf.operator(y)
    sigma = h0 - ly
    ny = gradient(y, grid) - np.einsum("kij...,k...->ij...", metric.gamma, y)
    div_y = np.einsum("ij...,ij...->...", metric.ginv, ny)
    u = tau - (2.0 / d) * div_y
    # split Y = 1/2 grad f + X with X divergence free
    lap = ScalarLaplace(metric)
    yvec = raise_index(metric, y)
    fsol = lap.solve(-2.0 * _div_vector(metric, yvec), tol=tol)
    f = fsol.x
    x = yvec - 0.5 * raise_index(metric, gradient(f, grid))
    # remove the Killing component of X (it does not change L_X g)
    for q in killing_basis(metric, tol):
        x = x - _vec_inner(metric, x, q) * q
    return TensorSplit(metric, u, f, x, sigma, {"conformal": ysol.iterations, "poisson": fsol.iterations})


def split_j_solution(metric: MetricField, h: np.ndarray, tol: float = 1e-10, jtol: float = 1e-8) -> JSplit:
    """Three-term splitting of a solution of div h - d tr h = 0.

    Rejects inputs whose sup-norm j-residual exceeds ``jtol`` with
    :class:`JEquationViolation`.
    """
    grid = metric.grid
    jres = float(np.abs(divergence(metric, h) - gradient(trace(metric, h), grid)).max())
    if jres > jtol:
        raise JEquationViolation(jres, jtol)
    sp = decompose(metric, h, tol)
    lie = float(np.abs(sp.lie_part).max())
    uvar = float(np.abs(sp.u - sp.c).max())
    return JSplit(sp.c, sp.f, sp.sigma, lie, uvar, jres, sp)


def tt_norm2(metric: MetricField, sigma: np.ndarray) -> np.ndarray:
    """Pointwise |sigma|^2."""
    return sym_norm2(metric, sigma)
