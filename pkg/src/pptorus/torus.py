"""Periodic grids on the flat torus T^d = R^d / Z^d and spectral calculus.

Array layout used throughout the package: component axes come first and
the d grid axes come last.  A scalar field has shape ``(N,)*d``, a vector
or covector field ``(d, N, ..., N)`` and a symmetric 2-tensor field the full
symmetric ``(d, d, N, ..., N)`` array.  Curves sampled in the parameter s
prepend one more axis of length M.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "TorusGrid",
    "SGrid",
    "FieldCurve",
    "fd_weights",
    "lagrange_eval",
    "spectral_diff",
    "gradient",
    "integrate",
    "mean",
    "interpolate",
    "s_derivative",
    "save_snapshot",
    "load_snapshot",
    "pack_sym",
    "unpack_sym",
]


@lru_cache(maxsize=None)
def _wavenumbers(d: int, n: int):
    # Angular wavenumbers 2*pi*m per axis, broadcast against (N,)*d, plus a
    # copy with the Nyquist entry zeroed for odd derivatives.
    m = np.fft.fftfreq(n, d=1.0 / n)
    k = 2.0 * np.pi * m
    k_odd = k.copy()
    k_odd[n // 2] = 0.0
    full, odd = [], []
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n
        full.append(k.reshape(shape))
        odd.append(k_odd.reshape(shape))
    for arr in full + odd:
        arr.setflags(write=False)
    return tuple(full), tuple(odd)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with N points per axis on the unit torus of dimension d."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    def coords(self) -> np.ndarray:
        """Coordinates x^i of all grid points, shape ``(d, N, ..., N)``."""
        x = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"))

    def wavenumbers(self, odd: bool = True):
        full, oddk = _wavenumbers(self.d, self.n)
        return oddk if odd else full

    def nyquist_mask(self) -> np.ndarray:
        """Boolean mask of Fourier modes whose every index is 0 or N/2.

        These modes are annihilated by all first spectral derivatives.
        """
        m = np.zeros(self.n, dtype=bool)
        m[0] = m[self.n // 2] = True
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            mask = mask & m.reshape(shape)
        return mask

    def check(self, arr: np.ndarray) -> None:
        if arr.shape[arr.ndim - self.d:] != self.shape:
            raise ValueError(f"array of shape {arr.shape} does not live on grid {self.shape}")


@dataclass(frozen=True)
class SGrid:
    """Uniform samples s_0 < ... < s_{M-1} of a parameter interval."""

    s0: float
    s1: float
    m: int

    def __post_init__(self):
        if self.m < 9:
            raise ValueError(f"an s-grid needs at least 9 samples, got {self.m}")
        if not self.s1 > self.s0:
            raise ValueError("s-interval must have positive length")

    @property
    def ds(self) -> float:
        return (self.s1 - self.s0) / (self.m - 1)

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s0, self.s1, self.m)

    def index(self, s: float) -> int:
        """Index of the sample nearest to s."""
        i = int(round((s - self.s0) / self.ds))
        return min(max(i, 0), self.m - 1)

    def sub(self, i0: int, i1: int) -> "SGrid":
        """Sub-grid made of samples i0..i1 inclusive."""
        s = self.s
        return SGrid(float(s[i0]), float(s[i1]), i1 - i0 + 1)


@dataclass(frozen=True)
class FieldCurve:
    """An s-sampled family of fields on one torus grid.

    ``values`` has shape ``(M, *components, *grid.shape)``.  ``deriv`` and
    ``deriv2`` optionally hold analytic first and second s-derivatives.
    """

    sgrid: SGrid
    grid: TorusGrid
    values: np.ndarray
    deriv: Optional[np.ndarray] = None
    deriv2: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.shape[0] != self.sgrid.m:
            raise ValueError("number of samples does not match the s-grid")
        self.grid.check(self.values)
        for extra in (self.deriv, self.deriv2):
            if extra is not None and extra.shape != self.values.shape:
                raise ValueError("derivative samples must match the value samples")

    def __len__(self):
        return self.sgrid.m

    def __getitem__(self, i):
        return self.values[i]

    def restrict(self, i0: int, i1: int) -> "FieldCurve":
        sl = slice(i0, i1 + 1)
        return FieldCurve(
            self.sgrid.sub(i0, i1),
            self.grid,
            self.values[sl],
            None if self.deriv is None else self.deriv[sl],
            None if self.deriv2 is None else self.deriv2[sl],
            dict(self.meta),
        )


def spectral_diff(f: np.ndarray, grid: TorusGrid, axis: int, order: int = 1) -> np.ndarray:
    """Exact derivative of the trigonometric interpolant along one grid axis.

    Leading component axes of ``f`` are carried along.  For odd orders the
    Nyquist mode is zeroed so that real data stays real.
    """
    if not 0 <= axis < grid.d:
        raise ValueError(f"axis {axis} out of range for a {grid.d}-dimensional grid")
    if order < 0:
        raise ValueError("derivative order must be nonnegative")
    grid.check(f)
    if order == 0:
        return np.array(f, copy=True)
    k = grid.wavenumbers(odd=order % 2 == 1)[axis]
    fhat = np.fft.fftn(f, axes=grid.axes)
    out = np.fft.ifftn(fhat * (1j * k) ** order, axes=grid.axes)
    return out if np.iscomplexobj(f) else out.real


def gradient(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """All first spectral derivatives of ``f``; the new axis is placed first."""
    grid.check(f)
    ks = grid.wavenumbers(odd=True)
    if np.iscomplexobj(f):
        fhat = np.fft.fftn(f, axes=grid.axes)
        return np.stack([np.fft.ifftn(fhat * (1j * k), axes=grid.axes) for k in ks])
    # real data: half-spectrum transforms along the last axis
    half = grid.n // 2 + 1
    fhat = np.fft.rfftn(f, axes=grid.axes)
    dhat = np.stack([fhat * (1j * k[..., :half]) for k in ks])
    return np.fft.irfftn(dhat, s=grid.shape, axes=grid.axes)


def integrate(f: np.ndarray, grid: TorusGrid, density: Optional[np.ndarray] = None):
    """Integral over T^d; spectrally exact for smooth periodic data.

    ``density`` is the volume density (e.g. sqrt(det g)); the flat unit
    density is used when omitted.  Leading component axes are kept.
    """
    grid.check(f)
    if density is not None:
        if np.any(density <= 0):
            raise ValueError("volume density must be positive")
        f = f * density
    return f.mean(axis=grid.axes)


def mean(f: np.ndarray, grid: TorusGrid, density: Optional[np.ndarray] = None):
    """Volume average of ``f`` with respect to ``density``."""
    if density is None:
        return integrate(f, grid)
    return integrate(f, grid, density) / integrate(np.ones(grid.shape), grid, density)


def _axis_phases(x: np.ndarray, n: int) -> np.ndarray:
    # exp(2 pi i m x) for integer m in FFT order; x has shape (P,).  Powers
    # by cumulative product are much cheaper than one exp per entry.
    half = n // 2
    z = np.exp(2j * np.pi * x)[:, None]
    out = np.empty((x.size, n), dtype=complex)
    out[:, 0] = 1.0
    out[:, 1:half + 1] = np.cumprod(np.broadcast_to(z, (x.size, half)), axis=1)
    out[:, half + 1:] = np.conj(out[:, half - 1:0:-1])
    out[:, half] = np.conj(out[:, half])
    return out


def interpolate(f: np.ndarray, grid: TorusGrid, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``f`` at arbitrary points.

    ``points`` has shape ``(d, ...)``; coordinates are wrapped modulo 1.
    Returns an array of shape ``(*components, ...)``.  Complex input is
    interpolated componentwise in its real and imaginary parts.
    """
    grid.check(f)
    if np.iscomplexobj(f):
        return interpolate(f.real, grid, points, chunk) + 1j * interpolate(f.imag, grid, points, chunk)
    points = np.asarray(points, dtype=float)
    if points.shape[0] != grid.d:
        raise ValueError("points must have the grid dimension as leading axis")
    pshape = points.shape[1:]
    pts = np.mod(points.reshape(grid.d, -1), 1.0)
    comp_shape = f.shape[: f.ndim - grid.d]
    coeff = np.fft.fftn(f, axes=grid.axes) / grid.size
    ncomp = int(np.prod(comp_shape, dtype=int))
    coeff = coeff.reshape(ncomp, grid.n, -1)
    npts = pts.shape[1]
    out = np.empty((ncomp, npts))
    for a in range(0, npts, chunk):
        b = min(a + chunk, npts)
        # contract the first axis by a matrix product, the rest pointwise
        acc = np.matmul(_axis_phases(pts[0, a:b], grid.n), coeff)
        acc = acc.reshape((ncomp, b - a) + (grid.n,) * (grid.d - 1))
        for ax in range(1, grid.d):
            e = _axis_phases(pts[ax, a:b], grid.n)
            acc = np.einsum("cpm...,pm->cp...", acc, e, optimize=True)
        out[:, a:b] = acc.real
    return out.reshape(comp_shape + pshape)


def fd_weights(m: int, order: int = 1) -> tuple:
    """Five-point fourth-order stencil offsets/weights for sample positions.

    Returns a list of (offsets, weights) pairs for sample indices 0..m-1,
    unscaled by the step (divide by ds**order).
    """
    if order != 1:
        raise ValueError("only first derivatives are provided")
    centre = (np.array([-2, -1, 1, 2]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0)
    left0 = (np.arange(5), np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0)
    left1 = (np.arange(-1, 4), np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0)
    rows = []
    for i in range(m):
        if i == 0:
            rows.append(left0)
        elif i == 1:
            rows.append(left1)
        elif i == m - 2:
            rows.append((-left1[0], -left1[1]))
        elif i == m - 1:
            rows.append((-left0[0], -left0[1]))
        else:
            rows.append(centre)
    return rows


def _fd_s(values: np.ndarray, ds: float) -> np.ndarray:
    m = values.shape[0]
    out = np.empty_like(values)
    for i, (off, w) in enumerate(fd_weights(m)):
        out[i] = np.tensordot(w, values[i + off], axes=(0, 0)) / ds
    return out


def s_derivative(curve, ds: Optional[float] = None):
    """Derivative in s of a sampled curve.

    Accepts a :class:`FieldCurve` (returns a FieldCurve; analytic derivative
    samples are returned when present) or a plain array with samples along
    axis 0 together with the step ``ds``.  Interior samples use the
    fourth-order central stencil, the two end samples on each side use
    one-sided fourth-order stencils.
    """
    if isinstance(curve, FieldCurve):
        if curve.deriv is not None:
            return FieldCurve(curve.sgrid, curve.grid, curve.deriv, curve.deriv2, None)
        return FieldCurve(curve.sgrid, curve.grid, _fd_s(curve.values, curve.sgrid.ds))
    values = np.asarray(curve)
    if values.shape[0] < 9:
        raise ValueError("need at least 9 samples for the fourth-order stencils")
    if ds is None:
        raise ValueError("step ds required for array input")
    return _fd_s(values, ds)


def lagrange_eval(samples: np.ndarray, sgrid: SGrid, s: float, width: int = 8) -> np.ndarray:
    """Local Lagrange interpolation in s using ``width`` neighbouring samples."""
    t = (s - sgrid.s0) / sgrid.ds
    i0 = int(np.floor(t)) - width // 2 + 1
    i0 = min(max(i0, 0), sgrid.m - width)
    nodes = np.arange(i0, i0 + width, dtype=float)
    w = np.ones(width)
    for j in range(width):
        others = np.delete(nodes, j)
        w[j] = np.prod((t - others) / (nodes[j] - others))
    return np.tensordot(w, samples[i0:i0 + width], axes=(0, 0))


# Snapshot files -------------------------------------------------------------

_MAGIC = b"PPWF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def pack_sym(t: np.ndarray, d: int) -> np.ndarray:
    """Upper-triangle components (d(d+1)/2 of them) of a symmetric field."""
    iu = np.triu_indices(d)
    return t[iu]


def unpack_sym(p: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`pack_sym`."""
    iu = np.triu_indices(d)
    out = np.empty((d, d) + p.shape[1:], dtype=p.dtype)
    out[iu] = p
    out[(iu[1], iu[0])] = p
    return out


def save_snapshot(path, grid: TorusGrid, f: np.ndarray, symmetric: bool = False) -> Path:
    """Write one field as a binary snapshot.

    Layout: magic ``PPWF``, then little-endian uint32 version, d, N and the
    component count, then the components as little-endian float64 in
    row-major order.  Symmetric tensors are stored by their upper triangle.
    """
    grid.check(f)
    comps = pack_sym(f, grid.d) if symmetric else f
    comps = np.asarray(comps, dtype="<f8").reshape((-1,) + grid.shape)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, grid.d, grid.n, comps.shape[0]))
        fh.write(np.ascontiguousarray(comps).tobytes(order="C"))
    return path


def load_snapshot(path) -> tuple:
    """Read a snapshot; returns ``(grid, components)`` with shape ``(C, *grid)``."""
    data = Path(path).read_bytes()
    magic, version, d, n, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = TorusGrid(d, n)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != count * grid.size:
        raise ValueError(f"{path}: truncated snapshot")
    return grid, body.reshape((count,) + grid.shape).copy()
