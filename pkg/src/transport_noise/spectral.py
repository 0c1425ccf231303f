"""Fourier representation of mean-zero real fields on the periodic unit torus.

Fields are stored in the half-spectrum layout produced by ``numpy.fft.rfftn``
with the convention

    f(x) = sum_k fhat(k) exp(2 pi i k.x),    fhat = rfftn(values) / N**d,

so the stored array has shape ``(N,) * (d - 1) + (N // 2 + 1,)`` for a scalar
and a leading axis of length ``d`` for a vector field. Nyquist modes are
always zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


class SpectralError(ValueError):
    """Raised for malformed spectral input (modes off the grid, bad shapes)."""


@dataclass(frozen=True)
class Grid:
    """Collocation grid with ``N`` points per axis on the ``d``-torus."""

    d: int
    N: int

    def __post_init__(self) -> None:
        if self.d not in (2, 3):
            raise SpectralError(f"dimension must be 2 or 3, got {self.d}")
        if self.N < 4 or self.N & (self.N - 1):
            raise SpectralError(f"N must be a power of two >= 4, got {self.N}")

    @property
    def phys_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def spec_shape(self) -> tuple[int, ...]:
        return (self.N,) * (self.d - 1) + (self.N // 2 + 1,)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers per axis, broadcastable to ``spec_shape``."""
        full = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(np.int64)
        half = np.arange(self.N // 2 + 1, dtype=np.int64)
        axes = [full] * (self.d - 1) + [half]
        return tuple(np.meshgrid(*axes, indexing="ij", sparse=True))

    @cached_property
    def kvec(self) -> np.ndarray:
        """Dense wavevector array of shape ``(d,) + spec_shape`` (float)."""
        return np.stack([np.broadcast_to(ki, self.spec_shape) for ki in self.k]).astype(float)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(ki.astype(float) ** 2 for ki in self.k) * np.ones(self.spec_shape)

    @cached_property
    def retained(self) -> np.ndarray:
        """Boolean mask of modes with every ``|k_i| < N/2``."""
        m = np.ones(self.spec_shape, dtype=bool)
        for ki in self.k:
            m = m & (np.abs(ki) < self.N // 2)
        return m

    @cached_property
    def dealias(self) -> np.ndarray:
        """Two-thirds rule mask: every ``|k_i| < N/3``."""
        m = np.ones(self.spec_shape, dtype=bool)
        for ki in self.k:
            m = m & (3 * np.abs(ki) < self.N)
        return m

    @cached_property
    def weight(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full spectrum (1 or 2)."""
        w = np.full(self.spec_shape, 2.0)
        w[..., 0] = 1.0
        w[..., self.N // 2] = 1.0
        return w

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros(self.spec_shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    def contains(self, kv: Sequence[int]) -> bool:
        return len(kv) == self.d and all(abs(int(c)) < self.N // 2 for c in kv)

    def index_of(self, kv: Sequence[int]) -> tuple[tuple[int, ...], bool]:
        """Storage index of wavevector ``kv`` and whether it is stored conjugated."""
        kv = [int(c) for c in kv]
        conj = kv[-1] < 0
        if conj:
            kv = [-c for c in kv]
        idx = tuple(c % self.N for c in kv[:-1]) + (kv[-1],)
        return idx, conj

    # -- norms on raw coefficient arrays (last d axes are spectral) --

    def sum_sq(self, c: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
        """Full-spectrum ``sum |c|^2`` reduced over spectral (and component) axes.

        ``c`` has shape ``lead + spec_shape``; the reduction keeps only the
        first axis when ``c.ndim > d + 1`` is a batch of vector fields.
        """
        w = self.weight if weight is None else self.weight * weight
        sq = w * (c.real**2 + c.imag**2)
        axes = tuple(range(sq.ndim - self.d, sq.ndim))
        out = sq.sum(axis=axes)
        return out

    def to_physical(self, c: np.ndarray) -> np.ndarray:
        axes = tuple(range(c.ndim - self.d, c.ndim))
        return np.fft.irfftn(c, s=self.phys_shape, axes=axes) * self.N**self.d

    def to_spectral(self, v: np.ndarray) -> np.ndarray:
        axes = tuple(range(v.ndim - self.d, v.ndim))
        c = np.fft.rfftn(v, axes=axes) / self.N**self.d
        return c * self.retained

    def to_full(self, c: np.ndarray) -> np.ndarray:
        """Expand a half spectrum to the full ``fftn`` layout by Hermitian symmetry."""
        N, d = self.N, self.d
        lead = c.shape[: c.ndim - d]
        full = np.zeros(lead + (N,) * d, dtype=complex)
        full[..., : N // 2 + 1] = c
        neg = (-np.arange(N)) % N
        src = c[..., 1 : N // 2][..., ::-1]  # last-axis entries kz = N/2-1 .. 1
        for ax in range(d - 1):
            src = np.take(src, neg, axis=src.ndim - d + ax)
        full[..., N // 2 + 1 :] = np.conj(src)
        return full

    def from_full(self, F: np.ndarray) -> np.ndarray:
        return F[..., : self.N // 2 + 1].copy()


def hermitian_defect(grid: Grid, c: np.ndarray) -> float:
    """Max violation of ``c(-k) = conj(c(k))`` on self-paired planes of ``c``."""
    full = grid.to_full(c)
    neg = (-np.arange(grid.N)) % grid.N
    mirrored = full
    for ax in range(grid.d):
        mirrored = np.take(mirrored, neg, axis=mirrored.ndim - grid.d + ax)
    return float(np.max(np.abs(full - np.conj(mirrored)), initial=0.0))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable real field on the torus in half-spectrum storage."""

    grid: Grid
    coeffs: np.ndarray
    rank: Literal["scalar", "vector"] = "scalar"

    def __post_init__(self) -> None:
        expect = self.grid.spec_shape if self.rank == "scalar" else (self.grid.d,) + self.grid.spec_shape
        if self.coeffs.shape != expect:
            raise SpectralError(f"coefficient shape {self.coeffs.shape} != {expect}")
        arr = np.array(self.coeffs, dtype=complex, copy=True)
        arr *= self.grid.retained
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def N(self) -> int:
        return self.grid.N

    @classmethod
    def zeros(cls, grid: Grid, rank: Literal["scalar", "vector"] = "scalar") -> "SpectralField":
        shape = grid.spec_shape if rank == "scalar" else (grid.d,) + grid.spec_shape
        return cls(grid, np.zeros(shape, dtype=complex), rank)

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        rank = "scalar" if values.ndim == grid.d else "vector"
        return cls(grid, grid.to_spectral(values), rank)

    def values(self) -> np.ndarray:
        """Physical values at the collocation points ``x_j = j / N``."""
        return self.grid.to_physical(self.coeffs)

    def mean(self) -> float:
        return float(np.max(np.abs(self.coeffs[(Ellipsis,) + (0,) * self.d])))

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.rank)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)

    def l2_sq(self) -> float:
        return float(self.grid.sum_sq(self.coeffs).sum())

    def inner(self, other: "SpectralField") -> float:
        """L2 inner product over the torus."""
        _check_compatible(self, other)
        w = self.grid.weight
        return float(np.sum(w * (self.coeffs.conj() * other.coeffs).real))

    def spectrum_rows(self) -> list[tuple]:
        """Nonzero modes as ``(component, k..., re, im)`` rows over the full spectrum."""
        full = self.grid.to_full(self.coeffs)
        if self.rank == "scalar":
            full = full[None]
        freqs = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(int)
        rows = []
        for comp in range(full.shape[0]):
            for idx in zip(*np.nonzero(np.abs(full[comp]) > 0)):
                kv = tuple(int(freqs[i]) for i in idx)
                val = full[comp][idx]
                rows.append((comp,) + kv + (float(val.real), float(val.imag)))
        return rows


def _check_compatible(a: SpectralField, b: SpectralField) -> None:
    if a.grid != b.grid or a.rank != b.rank:
        raise SpectralError("fields live on different grids or have different rank")


def from_modes(
    d: int,
    N: int,
    rank: Literal["scalar", "vector"] | int,
    modes: Iterable[tuple[Sequence[int], complex | Sequence[complex]]],
) -> SpectralField:
    """Build a real field from amplitudes given for one of each ``±k`` pair.

    For a vector field each amplitude is a length-``d`` sequence.
    """
    grid = Grid(d, N)
    if isinstance(rank, int):
        rank = "scalar" if rank == 1 else "vector"
    shape = grid.spec_shape if rank == "scalar" else (d,) + grid.spec_shape
    c = np.zeros(shape, dtype=complex)
    seen: set[tuple[int, ...]] = set()
    for kv, amp in modes:
        kv = tuple(int(x) for x in kv)
        if not grid.contains(kv):
            raise SpectralError(f"mode {kv} outside the retained grid |k_i| < {N // 2}")
        if not any(kv):
            raise SpectralError("the zero mode cannot be specified; fields are mean-zero")
        neg = tuple(-x for x in kv)
        if kv in seen or neg in seen:
            raise SpectralError(f"mode {kv} specified twice (directly or via -k)")
        seen.add(kv)
        amp = np.asarray(amp, dtype=complex)
        for sign_kv, val in ((kv, amp), (neg, np.conj(amp))):
            if sign_kv[-1] < 0:
                continue
            idx, _ = grid.index_of(sign_kv)
            c[(Ellipsis,) + idx] = val
    return SpectralField(grid, c, rank)


def sobolev_norm(f: SpectralField, s: float) -> float:
    """``( sum_k (1 + 4 pi^2 |k|^2)^s |fhat(k)|^2 )^(1/2)``."""
    w = (1.0 + 4.0 * np.pi**2 * f.grid.k2) ** s
    return float(np.sqrt(f.grid.sum_sq(f.coeffs, w).sum()))


def sobolev_weight(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + 4.0 * np.pi**2 * grid.k2) ** s


def _ik(grid: Grid) -> list[np.ndarray]:
    return [TWO_PI * 1j * ki for ki in grid.k]


def gradient(f: SpectralField) -> SpectralField:
    if f.rank != "scalar":
        raise SpectralError("gradient expects a scalar field")
    c = np.stack([ik * f.coeffs for ik in _ik(f.grid)])
    return SpectralField(f.grid, c, "vector")


def laplacian(f: SpectralField) -> SpectralField:
    return f.with_coeffs(-4.0 * np.pi**2 * f.grid.k2 * f.coeffs)


def divergence(v: SpectralField) -> SpectralField:
    if v.rank != "vector":
        raise SpectralError("divergence expects a vector field")
    c = sum(ik * v.coeffs[i] for i, ik in enumerate(_ik(v.grid)))
    return SpectralField(v.grid, c, "scalar")


def curl2d(v: SpectralField) -> SpectralField:
    """Scalar curl ``d_x v_y - d_y v_x`` of a planar vector field."""
    if v.rank != "vector" or v.d != 2:
        raise SpectralError("curl2d expects a 2D vector field")
    ikx, iky = _ik(v.grid)
    return SpectralField(v.grid, ikx * v.coeffs[1] - iky * v.coeffs[0], "scalar")


def biot_savart(zeta: SpectralField, tol: float = 1e-12) -> SpectralField:
    """Velocity ``(-d_y, d_x) Laplacian^{-1} zeta`` for a mean-zero planar vorticity."""
    if zeta.d != 2 or zeta.rank != "scalar":
        raise SpectralError("biot_savart expects a 2D scalar vorticity")
    if abs(zeta.coeffs[0, 0]) > tol:
        raise SpectralError("vorticity must be mean-zero")
    return SpectralField(zeta.grid, biot_savart_coeffs(zeta.grid, zeta.coeffs), "vector")


def biot_savart_coeffs(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Raw-array Biot-Savart; ``c`` has shape ``lead + spec_shape``."""
    psi = -c * grid.inv_k2 / (4.0 * np.pi**2)
    ikx, iky = _ik(grid)
    return np.stack([-iky * psi, ikx * psi], axis=-3)


def leray_coeffs(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Raw-array Leray projection; ``v`` has shape ``lead + (d,) + spec_shape``."""
    kv = grid.kvec
    axis = v.ndim - grid.d - 1
    comp = np.moveaxis(v, axis, 0)
    kdotv = sum(kv[i] * comp[i] for i in range(grid.d)) * grid.inv_k2
    proj = np.stack([comp[i] - kv[i] * kdotv for i in range(grid.d)])
    return np.moveaxis(proj, 0, axis)


def leray_project(v: SpectralField) -> SpectralField:
    if v.rank != "vector":
        raise SpectralError("leray_project expects a vector field")
    return v.with_coeffs(leray_coeffs(v.grid, v.coeffs))


def leray_complement(v: SpectralField) -> SpectralField:
    return v - leray_project(v)


def _product_spectral(grid: Grid, a: np.ndarray, b: np.ndarray, dealias: bool) -> np.ndarray:
    mask = grid.dealias if dealias else grid.retained
    pa = grid.to_physical(a * mask)
    pb = grid.to_physical(b * mask)
    return grid.to_spectral(pa * pb) * mask


def advect(
    u: SpectralField,
    f: SpectralField,
    conservative: bool = True,
    dealias: bool = True,
    div_tol: float = 1e-8,
) -> SpectralField:
    """Pseudo-spectral transport term ``div(u f)`` or ``(u.grad) f``.

    For vector ``f`` the operation acts componentwise.
    """
    if u.rank != "vector":
        raise SpectralError("advecting velocity must be a vector field")
    if u.grid != f.grid:
        raise SpectralError("fields live on different grids")
    grid = u.grid
    scale = max(np.sqrt(gradient_l2_sq(u)), 1.0)
    div = np.sqrt(divergence(u).l2_sq())
    if div > div_tol * scale:
        raise SpectralError(f"velocity divergence {div:.3e} exceeds tolerance")
    comps = [f.coeffs] if f.rank == "scalar" else list(f.coeffs)
    ik = _ik(grid)
    out = []
    for fc in comps:
        if conservative:
            acc = sum(ik[j] * _product_spectral(grid, u.coeffs[j], fc, dealias) for j in range(grid.d))
        else:
            acc = sum(_product_spectral(grid, u.coeffs[j], ik[j] * fc, dealias) for j in range(grid.d))
        out.append(acc)
    c = out[0] if f.rank == "scalar" else np.stack(out)
    return SpectralField(grid, c, f.rank)


def gradient_l2_sq(f: SpectralField) -> float:
    """``||grad f||^2`` (summed over components for vector fields)."""
    return float(f.grid.sum_sq(f.coeffs, 4.0 * np.pi**2 * f.grid.k2).sum())


def shift_full(grid: Grid, F: np.ndarray, k0: Sequence[int]) -> np.ndarray:
    """Multiply a full-layout spectrum by ``exp(2 pi i k0.x)``, dropping modes leaving the grid."""
    N, d = grid.N, grid.d
    out = F
    freqs = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
    mask = np.ones((N,) * d, dtype=bool)
    for ax, s in enumerate(k0):
        out = np.roll(out, int(s), axis=out.ndim - d + ax)
        src = freqs - int(s)
        ok = (np.abs(freqs) < N // 2) & (np.abs(src) < N // 2)
        shape = [1] * d
        shape[ax] = N
        mask = mask & ok.reshape(shape)
    return out * mask


def shift_multiply(
    k0: Sequence[int],
    a: Sequence[float],
    channel: Literal["cos", "sin"],
    f: SpectralField,
) -> SpectralField:
    """Exact spectrum of ``cos(2 pi k0.x) (a.grad) f`` or its ``sin`` analogue.

    Each input mode ``k`` feeds the two output modes ``k +- k0``; outputs
    beyond the retained grid are dropped, so no aliasing is introduced.
    """
    grid = f.grid
    if not grid.contains(k0):
        raise SpectralError(f"shift {tuple(k0)} outside the grid")
    a = np.asarray(a, dtype=float)
    ik = _ik(grid)
    comps = f.coeffs[None] if f.rank == "scalar" else f.coeffs
    out = []
    for fc in comps:
        g = sum(a[j] * ik[j] * fc for j in range(grid.d))
        G = grid.to_full(g)
        plus = shift_full(grid, G, k0)
        minus = shift_full(grid, G, [-int(s) for s in k0])
        if channel == "cos":
            H = 0.5 * (plus + minus)
        elif channel == "sin":
            H = (plus - minus) / 2j
        else:
            raise SpectralError(f"unknown channel {channel!r}")
        out.append(grid.from_full(H))
    c = out[0] if f.rank == "scalar" else np.stack(out)
    return SpectralField(grid, c, f.rank)


def write_spectrum_csv(f: SpectralField, path) -> None:
    """Dump nonzero modes as CSV rows ``component,k1,...,kd,re,im``."""
    import csv

    header = ["component"] + [f"k{i + 1}" for i in range(f.d)] + ["re", "im"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in f.spectrum_rows():
            w.writerow([row[0], *row[1:-2], repr(row[-2]), repr(row[-1])])
