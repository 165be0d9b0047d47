"""Periodic-box field algebra on a Fourier grid.

Fields hold real nodal samples; spectral coefficients come from the real
FFT over the spatial axes and are cached on first use.  Component axes come
first: a vector field on a 3-D grid has shape ``(3, n, n, n)``, a tensor
field ``(3, 3, n, n, n)``.

Derivatives use ``i k`` multipliers with the Nyquist mode zeroed, so first
derivatives of real fields stay real and ``div`` / ``grad`` are exact
adjoints of each other.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar

import numpy as np
import scipy.fft

_THREADS_ENV = "PIEZOFLOW_THREADS"


def fft_workers() -> int:
    try:
        return max(1, int(os.environ.get(_THREADS_ENV, "1")))
    except ValueError:
        return 1


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int
    L: float = 2 * np.pi
    d: int = 3

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def axes(self):
        return tuple(range(-self.d, 0))

    @property
    def cell_volume(self) -> float:
        return (self.L / self.n) ** self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    @cached_property
    def coords(self):
        """Nodal coordinates, one broadcastable array per axis."""
        x = np.arange(self.n) * (self.L / self.n)
        return np.meshgrid(*([x] * self.d), indexing="ij")

    @cached_property
    def modes(self):
        """Integer wavenumbers per axis, broadcast to the rfft layout."""
        full = np.fft.fftfreq(self.n, 1.0 / self.n)
        half = np.fft.rfftfreq(self.n, 1.0 / self.n)
        axes = [full] * (self.d - 1) + [half]
        return np.meshgrid(*axes, indexing="ij")

    @cached_property
    def k(self):
        scale = 2 * np.pi / self.L
        return [scale * m for m in self.modes]

    @cached_property
    def ik(self):
        out = []
        for m, kk in zip(self.modes, self.k):
            mult = 1j * kk
            mult[np.abs(m) == self.n // 2] = 0.0
            out.append(mult)
        return out

    @cached_property
    def k2(self):
        return sum(kk**2 for kk in self.k)

    @cached_property
    def inv_k2(self):
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def dealias_mask(self):
        """2/3-rule: keep integer modes with |m| < n/3 on every axis."""
        keep = np.ones(self.k2.shape, dtype=bool)
        for m in self.modes:
            keep &= np.abs(m) < self.n / 3.0
        return keep

    @cached_property
    def rfft_weights(self):
        """Multiplicity of each stored rfft coefficient in the full spectrum."""
        w = np.full(self.k2.shape, 2.0)
        last = self.modes[-1]
        w[(last == 0) | (np.abs(last) == self.n // 2)] = 1.0
        return w

    def fft(self, values):
        return scipy.fft.rfftn(values, axes=self.axes, workers=fft_workers())

    def ifft(self, coeffs):
        return scipy.fft.irfftn(coeffs, s=self.shape, axes=self.axes, workers=fft_workers())

    def refined(self, factor=2) -> "Grid":
        return Grid(self.n * factor, self.L, self.d)


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray
    rank: ClassVar[int] = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.grid.d,) * self.rank + self.grid.shape
        if values.shape != expected:
            raise ValueError(f"{type(self).__name__} expects shape {expected}, got {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @cached_property
    def hat(self):
        coeffs = self.grid.fft(self.values)
        coeffs.flags.writeable = False
        return coeffs

    @classmethod
    def from_hat(cls, grid: Grid, coeffs):
        obj = cls(grid, grid.ifft(coeffs))
        return obj

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros((grid.d,) * cls.rank + grid.shape))

    def magnitude(self):
        """Pointwise Euclidean (vector) or Frobenius (tensor) norm."""
        if self.rank == 0:
            return np.abs(self.values)
        axes = tuple(range(self.rank))
        return np.sqrt(np.sum(self.values**2, axis=axes))

    def _same(self, other):
        if not isinstance(other, Field):
            return other
        if other.grid != self.grid:
            raise GridMismatch(f"{self.grid} vs {other.grid}")
        if other.rank != self.rank:
            raise ValueError("rank mismatch")
        return other.values

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._same(other))

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._same(other))

    def __mul__(self, c):
        return type(self)(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def __truediv__(self, c):
        return type(self)(self.grid, self.values / c)


class ScalarField(Field):
    rank = 0


class VectorField(Field):
    rank = 1


class TensorField(Field):
    rank = 2


def _check(*fields):
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch(f"{grid} vs {f.grid}")
    return grid


# ---------------------------------------------------------------- operators


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField(g, np.stack([g.ifft(ik * f.hat) for ik in g.ik]))


def grad_vector(v: VectorField) -> TensorField:
    """Full velocity gradient, component (i, j) = d v_i / d x_j."""
    g = v.grid
    return TensorField(g, np.stack([np.stack([g.ifft(ik * v.hat[i]) for ik in g.ik]) for i in range(g.d)]))


def div(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, g.ifft(sum(ik * v.hat[i] for i, ik in enumerate(g.ik))))


def sym_grad(v: VectorField) -> TensorField:
    G = grad_vector(v).values
    return TensorField(v.grid, 0.5 * (G + np.swapaxes(G, 0, 1)))


def div_tensor(S: TensorField) -> VectorField:
    """(div S)_i = d S_ij / d x_j."""
    g = S.grid
    return VectorField(g, np.stack([g.ifft(sum(ik * S.hat[i, j] for j, ik in enumerate(g.ik))) for i in range(g.d)]))


def div_div_hat(grid: Grid, T_hat):
    """Spectral coefficients of d_i d_j T_ij."""
    out = np.zeros(grid.k2.shape, dtype=complex)
    for i in range(grid.d):
        for j in range(grid.d):
            out += grid.ik[i] * grid.ik[j] * T_hat[i, j]
    return out


def div_div(S: TensorField) -> ScalarField:
    return ScalarField(S.grid, S.grid.ifft(div_div_hat(S.grid, S.hat)))


def laplacian(f: Field) -> Field:
    return type(f).from_hat(f.grid, -f.grid.k2 * f.hat)


def inverse_laplacian(f: ScalarField) -> ScalarField:
    """Zero-mean u with Laplacian u = f - mean(f)."""
    return ScalarField.from_hat(f.grid, -f.grid.inv_k2 * f.hat)


def hessian_norm(f: Field) -> float:
    """L2 norm of the full second gradient, via Plancherel."""
    g = f.grid
    return np.sqrt(_spectral_sum(g, (g.k2**2) * np.abs(f.hat) ** 2))


def helmholtz_project(v: VectorField):
    """Split v = v_div + grad g with Laplacian g = div v; returns (v_div, g)."""
    grid = v.grid
    div_hat = sum(ik * v.hat[i] for i, ik in enumerate(grid.ik))
    g_hat = -grid.inv_k2 * div_hat
    vd_hat = np.stack([v.hat[i] - grid.ik[i] * g_hat for i in range(grid.d)])
    return VectorField.from_hat(grid, vd_hat), ScalarField.from_hat(grid, g_hat)


def project_hat(grid: Grid, v_hat):
    """Leray projection acting directly on vector spectral coefficients."""
    div_hat = sum(ik * v_hat[i] for i, ik in enumerate(grid.ik))
    g_hat = -grid.inv_k2 * div_hat
    return np.stack([v_hat[i] - grid.ik[i] * g_hat for i in range(grid.d)])


def mollify(v: Field, delta: float) -> Field:
    """Gaussian smoothing, spectral multiplier exp(-delta |k|^2)."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return type(v).from_hat(v.grid, np.exp(-delta * v.grid.k2) * v.hat)


def dealias(f: Field) -> Field:
    return type(f).from_hat(f.grid, f.grid.dealias_mask * f.hat)


def outer(v: VectorField, w: VectorField | None = None) -> TensorField:
    w = v if w is None else w
    return TensorField(v.grid, np.einsum("i...,j...->ij...", v.values, w.values))


# ---------------------------------------------------------------- norms


def _spectral_sum(grid: Grid, density):
    """Physical integral corresponding to a sum of |coeff|^2-type densities."""
    N = grid.n**grid.d
    return float(np.sum(grid.rfft_weights * density)) * grid.cell_volume / N


def integrate(values, grid: Grid) -> float:
    return float(np.sum(values)) * grid.cell_volume


def inner(a: Field, b: Field) -> float:
    _check(a, b)
    return integrate(a.values * b.values, a.grid)


def lq_norm(f: Field | np.ndarray, q: float = 2.0, grid: Grid | None = None) -> float:
    """Discrete L^q norm of the pointwise magnitude (nodal sum x cell volume)."""
    if isinstance(f, Field):
        grid, a = f.grid, f.magnitude()
    else:
        a = np.abs(f)
    if np.isinf(q):
        return float(a.max())
    return integrate(a**q, grid) ** (1.0 / q)


def l2_norm(f: Field) -> float:
    return lq_norm(f, 2.0)


def spectral_l2_norm(f: Field) -> float:
    """L2 norm computed from spectral coefficients (Plancherel)."""
    dens = np.abs(f.hat) ** 2
    if f.rank:
        dens = dens.sum(axis=tuple(range(f.rank)))
    return np.sqrt(_spectral_sum(f.grid, dens))


def phi(s, r):
    """s^2 (1 + s^2)^((r-2)/2)."""
    s = np.asarray(s, dtype=float)
    return s**2 * (1.0 + s**2) ** ((r - 2.0) / 2.0)


def psi(s, r):
    """min(s^6, s^(3r/(3-r)))."""
    s = np.asarray(s, dtype=float)
    return np.minimum(s**6, s ** (3.0 * r / (3.0 - r)))


def _young(kind, r):
    if kind in ("phi", "phi_r"):
        return lambda s: phi(s, r)
    if kind in ("psi", "psi_r"):
        return lambda s: psi(s, r)
    if kind in ("power", "power-q"):
        if r < 1:
            raise ValueError("power exponent must be >= 1")
        return lambda s: s**r
    raise ValueError(f"unknown Young function {kind!r}")


def luxemburg_norm(f: Field | np.ndarray, kind: str = "phi", r: float = 2.0, grid: Grid | None = None,
                   rtol: float = 1e-10) -> float:
    """inf{lam > 0 : cell_volume * sum Phi(|f|/lam) <= 1}, by bisection.

    ``kind`` is ``"phi"``, ``"psi"`` or ``"power"``; for ``"power"`` the
    exponent is ``r``.
    """
    if isinstance(f, Field):
        grid, a = f.grid, f.magnitude().ravel()
    else:
        a = np.abs(np.asarray(f, dtype=float)).ravel()
    a = a[a > 0]
    if a.size == 0:
        return 0.0
    Phi = _young(kind, r)
    dv = grid.cell_volume

    def modular(lam):
        return dv * float(np.sum(Phi(a / lam)))

    lam = np.sqrt(dv * np.sum(a**2)) or float(a.max())
    lo = hi = lam
    while modular(lo) <= 1.0:
        lo *= 0.5
    while modular(hi) > 1.0:
        hi *= 2.0
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if modular(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def split_norm(f: Field | np.ndarray, s: float, side: str, grid: Grid | None = None) -> float:
    """L^s norm restricted to nodes with |f| <= 1 (side "le") or |f| > 1 ("ge")."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if isinstance(f, Field):
        grid, a = f.grid, f.magnitude()
    else:
        a = np.abs(f)
    if side in ("le", "<="):
        mask = a <= 1.0
    elif side in ("ge", ">="):
        mask = a > 1.0
    else:
        raise ValueError(f"side must be 'le' or 'ge', got {side!r}")
    return integrate(np.where(mask, a, 0.0) ** s, grid) ** (1.0 / s)


def second_sym_gradient(v: VectorField):
    """Array of d_k D_ij(v), shape (d, d, d, *grid)."""
    g = v.grid
    out = np.empty((g.d, g.d, g.d) + g.shape)
    for i in range(g.d):
        for j in range(i, g.d):
            D_hat = 0.5 * (g.ik[j] * v.hat[i] + g.ik[i] * v.hat[j])
            for k, ik in enumerate(g.ik):
                out[k, i, j] = out[k, j, i] = g.ifft(ik * D_hat)
    return out


def i_r_functional(v: VectorField, r: float) -> float:
    """Integral of (1 + |D(v)|^2)^((r-2)/2) |D(grad v)|^2 by nodal quadrature."""
    D = sym_grad(v)
    weight = (1.0 + D.magnitude() ** 2) ** ((r - 2.0) / 2.0)
    dD2 = np.sum(second_sym_gradient(v) ** 2, axis=(0, 1, 2))
    return integrate(weight * dD2, v.grid)


# ---------------------------------------------------------------- constructors


def random_band_limited(grid: Grid, rng: np.random.Generator, rank: int = 0, kmax: float | None = None,
                        amplitude: float = 1.0, zero_mean: bool = True) -> Field:
    """Random field whose spectrum vanishes beyond integer wavenumber ``kmax``."""
    kmax = grid.n / 3.0 - 1 if kmax is None else kmax
    cls = {0: ScalarField, 1: VectorField, 2: TensorField}[rank]
    noise = rng.standard_normal((grid.d,) * rank + grid.shape)
    coeffs = grid.fft(noise)
    mnorm = np.sqrt(sum(m**2 for m in grid.modes))
    mask = (mnorm <= kmax) & (mnorm > 0 if zero_mean else True)
    # the Nyquist mode is never band-limited content
    for m in grid.modes:
        mask &= np.abs(m) < grid.n // 2
    coeffs = coeffs * mask
    values = grid.ifft(coeffs)
    scale = np.sqrt(np.mean(values**2)) if rank == 0 else np.sqrt(np.mean(np.sum(values**2, axis=tuple(range(rank)))))
    if scale > 0:
        values = values * (amplitude / scale)
    return cls(grid, values)


def random_solenoidal(grid: Grid, rng: np.random.Generator, kmax: float | None = None,
                      amplitude: float = 1.0) -> VectorField:
    v = random_band_limited(grid, rng, 1, kmax, 1.0)
    vd, _ = helmholtz_project(v)
    rms = np.sqrt(np.mean(np.sum(vd.values**2, axis=0)))
    return vd * (amplitude / rms)


def resample(f: Field, grid: Grid) -> Field:
    """Spectral interpolation of a band-limited field onto another grid of the same box."""
    src = f.grid
    if src.L != grid.L or src.d != grid.d:
        raise GridMismatch("resampling needs the same box and dimension")
    lead = f.values.shape[: f.rank]
    out = np.zeros(lead + grid.k2.shape, dtype=complex)
    nmin = min(src.n, grid.n)
    half = nmin // 2
    # copy the low modes shared by both grids; Nyquist content is dropped
    idx_src, idx_dst = [], []
    for ax in range(grid.d - 1):
        sel = np.r_[0:half, -half + 1:0]
        idx_src.append(sel % src.n)
        idx_dst.append(sel % grid.n)
    idx_src.append(np.arange(half))
    idx_dst.append(np.arange(half))
    src_ix = np.ix_(*idx_src)
    dst_ix = np.ix_(*idx_dst)
    scale = (grid.n / src.n) ** grid.d
    for comp in np.ndindex(*lead) if lead else [()]:
        out[comp][dst_ix] = f.hat[comp][src_ix] * scale
    return type(f).from_hat(grid, out)
