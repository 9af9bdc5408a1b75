"""Riemannian tensor calculus on torus grids with spectral derivatives.

Index conventions: ``gamma[k, i, j]`` is the Christoffel symbol of the
second kind; ``riem[a, b, c, d]`` is R^a_{bcd} with
R(d_c, d_d) d_b = R^a_{bcd} d_a and R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y];
``ric[b, d] = R^a_{bad}``.  The Laplacian on functions is the positive one,
Delta = -tr nabla^2.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .torus import FieldCurve, TorusGrid, gradient, integrate, s_derivative

__all__ = [
    "MetricField",
    "NotPositiveDefinite",
    "christoffel",
    "riemann",
    "ricci",
    "scalar_curvature",
    "covariant_derivative",
    "divergence",
    "trace",
    "hessian",
    "laplacian",
    "lie_metric",
    "lichnerowicz",
    "j_residual",
    "lower",
    "raise_index",
    "sym_norm2",
    "l2_inner",
]

_EIG_FLOOR = 1e-10


class NotPositiveDefinite(ValueError):
    """Raised when a metric fails the positive-definiteness check."""


def _to_matrix(t: np.ndarray, d: int) -> np.ndarray:
    # (d, d, *grid) -> (*grid, d, d)
    return np.moveaxis(np.moveaxis(t, 0, -1), 0, -1)


def _from_matrix(a: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(a, -1, 0), -1, 0)


class MetricField:
    """A Riemannian metric sampled on a torus grid.

    Positive definiteness is checked at construction (smallest eigenvalue
    above 1e-10 everywhere).  Inverse, volume density, derivatives and
    Christoffel symbols are computed lazily and cached.
    """

    def __init__(self, g: np.ndarray, grid: TorusGrid, check: bool = True):
        g = np.asarray(g, dtype=float)
        if g.shape != (grid.d, grid.d) + grid.shape:
            raise ValueError(f"metric array has shape {g.shape}, expected {(grid.d, grid.d) + grid.shape}")
        self.grid = grid
        self.g = 0.5 * (g + np.swapaxes(g, 0, 1))
        self.g.setflags(write=False)
        if check:
            lam = np.linalg.eigvalsh(_to_matrix(self.g, grid.d))
            if not np.all(np.isfinite(lam)) or lam.min() <= _EIG_FLOOR:
                raise NotPositiveDefinite(f"metric not positive definite (min eigenvalue {lam.min():.3e})")

    @property
    def d(self) -> int:
        return self.grid.d

    @classmethod
    def constant(cls, matrix, grid: TorusGrid) -> "MetricField":
        m = np.asarray(matrix, dtype=float)
        return cls(np.broadcast_to(m[(...,) + (None,) * grid.d], (grid.d, grid.d) + grid.shape).copy(), grid)

    @classmethod
    def flat(cls, grid: TorusGrid) -> "MetricField":
        return cls.constant(np.eye(grid.d), grid)

    @cached_property
    def ginv(self) -> np.ndarray:
        return _from_matrix(np.linalg.inv(_to_matrix(self.g, self.d)))

    @cached_property
    def sqrtdet(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(_to_matrix(self.g, self.d)))

    @cached_property
    def volume(self) -> float:
        return float(integrate(np.ones(self.grid.shape), self.grid, self.sqrtdet))

    @cached_property
    def dg(self) -> np.ndarray:
        """``dg[l, i, j] = d_l g_ij``."""
        return gradient(self.g, self.grid)

    @cached_property
    def gamma(self) -> np.ndarray:
        dg = self.dg
        # first kind: [ij, l] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        first = 0.5 * (np.einsum("ijl...->ijl...", dg) + np.einsum("jil...->ijl...", dg) - np.einsum("lij...->ijl...", dg))
        return np.einsum("kl...,ijl...->kij...", self.ginv, first)

    @cached_property
    def is_constant(self) -> bool:
        ref = self.g.reshape(self.d, self.d, -1)
        return bool(np.abs(ref - ref[..., :1]).max() < 1e-14 * max(1.0, np.abs(ref).max()))

    def mean_matrix(self) -> np.ndarray:
        return self.g.reshape(self.d, self.d, -1).mean(axis=-1)


def christoffel(metric: MetricField) -> np.ndarray:
    """Christoffel symbols Gamma^k_ij, shape ``(d, d, d, *grid)``."""
    return metric.gamma


def _dgamma(metric: MetricField) -> np.ndarray:
    # dG[m, k, i, j] = d_m Gamma^k_ij
    return gradient(metric.gamma, metric.grid)


def riemann(metric: MetricField) -> np.ndarray:
    """Full curvature tensor R^a_{bcd}, shape ``(d, d, d, d, *grid)``."""
    G = metric.gamma
    dG = _dgamma(metric)
    term = np.einsum("cadb...->abcd...", dG) - np.einsum("dacb...->abcd...", dG)
    term += np.einsum("ace...,edb...->abcd...", G, G) - np.einsum("ade...,ecb...->abcd...", G, G)
    return term


def ricci(metric: MetricField) -> np.ndarray:
    """Ricci tensor via ric_mn = d_x G^x_mn + G^x_xt G^t_mn - d_m G^x_xn - G^x_mt G^t_xn."""
    G = metric.gamma
    dG = _dgamma(metric)
    r = np.einsum("xxmn...->mn...", dG) - np.einsum("mxxn...->mn...", dG)
    r += np.einsum("xxt...,tmn...->mn...", G, G) - np.einsum("xmt...,txn...->mn...", G, G)
    return 0.5 * (r + np.swapaxes(r, 0, 1))


def scalar_curvature(metric: MetricField) -> np.ndarray:
    return np.einsum("ij...,ij...->...", metric.ginv, ricci(metric))


def lower(metric: MetricField, x: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", metric.g, x)


def raise_index(metric: MetricField, w: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", metric.ginv, w)


def covariant_derivative(metric: MetricField, t: np.ndarray, rank: int) -> np.ndarray:
    """nabla of a fully covariant tensor; the derivative index comes first.

    ``t`` has ``rank`` leading component axes; the result has rank+1.
    """
    G = metric.gamma
    out = gradient(t, metric.grid)
    letters = "abcdefgh"[:rank]
    for slot in range(rank):
        src = letters[:slot] + "l" + letters[slot + 1:]
        out = out - np.einsum(f"lk{letters[slot]}...,{src}...->k{letters}...", G, t)
    return out


def divergence(metric: MetricField, h: np.ndarray) -> np.ndarray:
    """(div h)_j = g^{ik} nabla_k h_ij for a symmetric 2-tensor."""
    metric.grid.check(h)
    nh = covariant_derivative(metric, h, 2)
    return np.einsum("ki...,kij...->j...", metric.ginv, nh)


def trace(metric: MetricField, h: np.ndarray) -> np.ndarray:
    metric.grid.check(h)
    return np.einsum("ij...,ij...->...", metric.ginv, h)


def hessian(metric: MetricField, f: np.ndarray) -> np.ndarray:
    """nabla^2 f = nabla df, built from two first spectral derivatives."""
    metric.grid.check(f)
    df = gradient(f, metric.grid)
    h = gradient(df, metric.grid) - np.einsum("kij...,k...->ij...", metric.gamma, df)
    return 0.5 * (h + np.swapaxes(h, 0, 1))


def laplacian(metric: MetricField, f: np.ndarray) -> np.ndarray:
    """Positive Laplacian -(1/mu) d_i (mu g^{ij} d_j f)."""
    df = gradient(f, metric.grid)
    flux = metric.sqrtdet * np.einsum("ij...,j...->i...", metric.ginv, df)
    dflux = gradient(flux, metric.grid)
    return -np.einsum("ii...->...", dflux) / metric.sqrtdet


def lie_metric(metric: MetricField, x: np.ndarray, covector: bool = False) -> np.ndarray:
    """(L_X g)_ij = nabla_i X_j + nabla_j X_i.

    ``x`` is a vector field unless ``covector`` is set, in which case it is
    taken to be X^flat.
    """
    metric.grid.check(x)
    xf = x if covector else lower(metric, x)
    nx = covariant_derivative(metric, xf, 1)
    return nx + np.swapaxes(nx, 0, 1)


def sym_norm2(metric: MetricField, h: np.ndarray, k: np.ndarray | None = None) -> np.ndarray:
    """Pointwise g^{ia} g^{jb} h_ij k_ab (k defaults to h)."""
    k = h if k is None else k
    return np.einsum("ia...,jb...,ij...,ab...->...", metric.ginv, metric.ginv, h, k)


def l2_inner(metric: MetricField, h: np.ndarray, k: np.ndarray) -> float:
    """L^2 inner product of symmetric 2-tensors over the torus."""
    return float(integrate(sym_norm2(metric, h, k), metric.grid, metric.sqrtdet))


def lichnerowicz(metric: MetricField, sigma: np.ndarray, riem: np.ndarray | None = None) -> np.ndarray:
    """Delta_L sigma = nabla^* nabla sigma + Ric o sigma + sigma o Ric - 2 R sigma.

    With (R sigma)(X, Y) = sum_i sigma(R(e_i, X) Y, e_i).  The Ricci terms
    vanish on the Ricci-flat metrics this package works with, but are kept
    so the operator is correct in general.
    """
    metric.grid.check(sigma)
    n1 = covariant_derivative(metric, sigma, 2)
    n2 = covariant_derivative(metric, n1, 3)
    rough = -np.einsum("ab...,abij...->ij...", metric.ginv, n2)
    R = riemann(metric) if riem is None else riem
    # (R sigma)_xy = sigma_af g^{df} R^a_{ydx}
    rs = np.einsum("af...,df...,aydx...->xy...", sigma, metric.ginv, R)
    ric = np.einsum("abad...->bd...", R)
    ric_up = np.einsum("ia...,ab...->ib...", metric.ginv, ric)
    rc = np.einsum("ik...,kj...->ij...", sigma, ric_up)
    out = rough + rc + np.swapaxes(rc, 0, 1) - 2.0 * rs
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def j_residual(curve: FieldCurve) -> FieldCurve:
    """div(g_s') - d tr(g_s') per sample of a metric curve."""
    gdot = s_derivative(curve).values
    out = np.empty((curve.sgrid.m, curve.grid.d) + curve.grid.shape)
    for i in range(curve.sgrid.m):
        try:
            m = MetricField(curve.values[i], curve.grid)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(f"sample {i}: {exc}") from None
        out[i] = divergence(m, gdot[i]) - gradient(trace(m, gdot[i]), curve.grid)
    return FieldCurve(curve.sgrid, curve.grid, out)
