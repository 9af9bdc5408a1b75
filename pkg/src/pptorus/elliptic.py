"""Variable-coefficient elliptic solves on the torus.

All operators are assembled in their weighted (energy) form, so the
discrete matrices are exactly symmetric positive semidefinite in the plain
Euclidean inner product on grid values.  This lets conjugate gradients run
without any symmetrisation fudge.  Preconditioning uses the exact inverse of
the operator frozen at the mean metric, applied in Fourier space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .riemann import MetricField
from .torus import TorusGrid, gradient

__all__ = [
    "ConvergenceError",
    "CGResult",
    "pcg",
    "ScalarLaplace",
    "VectorLie",
]


class ConvergenceError(RuntimeError):
    """Conjugate gradients hit the iteration cap before reaching tolerance."""


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def pcg(apply: Callable, b: np.ndarray, precond: Callable, tol: float = 1e-10, maxiter: int = 1000,
        atol: float = 0.0, x0: Optional[np.ndarray] = None) -> CGResult:
    """Preconditioned conjugate gradients for a symmetric semidefinite system.

    Stops when ||r|| <= max(tol * ||b||, atol).  ``x0`` is an optional
    starting guess.  Raises :class:`ConvergenceError` if ``maxiter`` is
    exhausted.
    """
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0 or bnorm <= atol:
        return CGResult(x, 0, 0.0)
    tol = max(tol, atol / bnorm)
    r = b.copy()
    if x0 is not None:
        x = np.array(x0, dtype=b.dtype, copy=True)
        r -= apply(x)
        if float(np.linalg.norm(r)) <= tol * bnorm:
            return CGResult(x, 0, float(np.linalg.norm(r)) / bnorm)
    z = precond(r)
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    rel = 1.0
    for it in range(1, maxiter + 1):
        ap = apply(p)
        pap = float(np.vdot(p, ap).real)
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            return CGResult(x, it, rel)
        z = precond(r)
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if rel <= tol:
        return CGResult(x, it, rel)
    raise ConvergenceError(f"CG stalled at relative residual {rel:.3e} after {maxiter} iterations (tol {tol:.1e})")


def _default_cap(grid: TorusGrid) -> int:
    return 10 * grid.size


class ScalarLaplace:
    """The positive Laplacian of a metric, K f = -d_i (mu g^ij d_j f).

    ``solve(r)`` returns the mean-zero f with Delta f = r (the mean of r
    with respect to the volume density is projected out first).
    """

    def __init__(self, metric: MetricField):
        self.metric = metric
        grid = metric.grid
        self.grid = grid
        self.w = metric.sqrtdet * metric.ginv
        gbar = metric.mean_matrix()
        mubar = float(np.sqrt(np.linalg.det(gbar)))
        ginvbar = np.linalg.inv(gbar)
        ks = grid.wavenumbers(odd=True)
        sym = sum(mubar * ginvbar[i, j] * ks[i] * ks[j] for i in range(grid.d) for j in range(grid.d))
        sym = np.broadcast_to(sym, grid.shape).copy()
        self.dead = grid.nyquist_mask()
        sym[self.dead] = 1.0
        self.inv_sym = 1.0 / sym
        self.inv_sym[self.dead] = 0.0

    def apply(self, f: np.ndarray) -> np.ndarray:
        df = gradient(f, self.grid)
        flux = np.einsum("ij...,j...->i...", self.w, df)
        return -np.einsum("ii...->...", gradient(flux, self.grid))

    def precond(self, r: np.ndarray) -> np.ndarray:
        half = self.grid.n // 2 + 1
        return np.fft.irfftn(np.fft.rfftn(r) * self.inv_sym[..., :half], s=self.grid.shape, axes=self.grid.axes)

    def _project(self, b: np.ndarray) -> np.ndarray:
        half = self.grid.n // 2 + 1
        bh = np.fft.rfftn(b)
        bh[self.dead[..., :half]] = 0.0
        return np.fft.irfftn(bh, s=self.grid.shape, axes=self.grid.axes)

    def solve(self, r: np.ndarray, tol: float = 1e-10, maxiter: int | None = None) -> CGResult:
        mu = self.metric.sqrtdet
        r = r - float((r * mu).sum() / mu.sum())
        b = self._project(mu * r)
        res = pcg(self.apply, b, self.precond, tol, maxiter or _default_cap(self.grid))
        res.x = self._project(res.x)
        return res


class VectorLie:
    """Normal operator of the (conformal) Killing operator on covectors.

    L Y = nabla Y + (nabla Y)^T - alpha (2/d) (div Y) g, with alpha = 1 for
    the conformal Killing operator and alpha = 0 for the Killing operator.
    ``apply`` realises 1/2 L^* L in weighted form, exactly symmetric.
    """

    def __init__(self, metric: MetricField, conformal: bool):
        self.metric = metric
        self.grid = metric.grid
        self.alpha = 1.0 if conformal else 0.0
        d = self.grid.d
        gbar = metric.mean_matrix()
        mubar = float(np.sqrt(np.linalg.det(gbar)))
        ginvbar = np.linalg.inv(gbar)
        beta = 1.0 - 2.0 * self.alpha / d
        ks = [np.broadcast_to(k, self.grid.shape) for k in self.grid.wavenumbers(odd=True)]
        kvec = np.stack(ks, axis=-1)  # (*grid, d)
        ksharp = kvec @ ginvbar
        k2 = np.einsum("...i,...i->...", kvec, ksharp)
        mat = k2[..., None, None] * np.eye(d) + beta * kvec[..., :, None] * ksharp[..., None, :]
        sym = mubar * np.einsum("ij,...jk->...ik", ginvbar, mat)
        self.dead = self.grid.nyquist_mask()
        sym[self.dead] = np.eye(d)
        inv = np.linalg.inv(sym)
        inv[self.dead] = 0.0
        self.inv_sym = inv

    def operator(self, y: np.ndarray) -> np.ndarray:
        """L Y as a symmetric 2-tensor."""
        m = self.metric
        ny = gradient(y, self.grid) - np.einsum("kij...,k...->ij...", m.gamma, y)
        t = ny + np.swapaxes(ny, 0, 1)
        if self.alpha:
            div = np.einsum("ij...,ij...->...", m.ginv, ny)
            t = t - self.alpha * (2.0 / self.grid.d) * div * m.g
        return t

    def adjoint_raw(self, t: np.ndarray) -> np.ndarray:
        """Weighted adjoint: returns mu g^{-1} L^* T (a vector density)."""
        m = self.metric
        half = np.einsum("ia...,ab...->ib...", m.ginv, t)
        tsharp = m.sqrtdet * np.einsum("ib...,jb...->ij...", half, m.ginv)
        b = 2.0 * tsharp
        if self.alpha:
            tr = np.einsum("ab...,ab...->...", m.g, tsharp)
            b = b - self.alpha * (2.0 / self.grid.d) * tr * m.ginv
        db = gradient(b, self.grid)
        return -np.einsum("iij...->j...", db) - np.einsum("jab...,ab...->j...", m.gamma, b)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return 0.5 * self.adjoint_raw(self.operator(y))

    def _restricted(self, y: np.ndarray) -> np.ndarray:
        # Modes with every index in {0, N/2} are invisible to the first
        # derivatives; the unknown is kept orthogonal to them so that the
        # restricted normal equations stay consistent.
        return self.project(self.apply(self.project(y)))

    def precond(self, r: np.ndarray) -> np.ndarray:
        axes, half = self.grid.axes, self.grid.n // 2 + 1
        rh = np.fft.rfftn(r, axes=axes)
        zh = np.einsum("...ij,j...->i...", self.inv_sym[..., :half, :, :], rh)
        return np.fft.irfftn(zh, s=self.grid.shape, axes=axes)

    def project(self, b: np.ndarray) -> np.ndarray:
        axes, half = self.grid.axes, self.grid.n // 2 + 1
        bh = np.fft.rfftn(b, axes=axes)
        bh[:, self.dead[..., :half]] = 0.0
        return np.fft.irfftn(bh, s=self.grid.shape, axes=axes)

    def solve_normal(self, t: np.ndarray, tol: float = 1e-10, maxiter: int | None = None,
                     x0: Optional[np.ndarray] = None) -> CGResult:
        """Least-squares fit L Y ~ t; returns the covector Y."""
        # absolute floor: a right-hand side below tol * ||t|| means t is
        # already orthogonal to the range to working precision
        b = self.project(0.5 * self.adjoint_raw(t))
        res = pcg(self._restricted, b, self.precond, tol, maxiter or _default_cap(self.grid),
                  atol=tol * float(np.linalg.norm(t)), x0=None if x0 is None else self.project(x0))
        res.x = self.project(res.x)
        return res
