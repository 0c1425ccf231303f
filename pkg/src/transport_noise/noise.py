"""Transport-noise ensemble: wavevector support, bases of k-perp, coefficient
families, Brownian channels, the Ito-Stratonovich corrector and the velocity
corrector Q_theta.

Channel ordering (part of the external interface): for ``k`` in the positive
half ``K+`` in lexicographic order, for ``alpha = 1..d-1``, a ``cos`` channel
followed by a ``sin`` channel. Each channel carries

    xi = 2 * pref * theta_k * a_{k,alpha} * cos(2 pi k.x)   (resp. sin)

driven by an independent real Brownian motion.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy import fft as sfft

from .spectral import (
    TWO_PI,
    Grid,
    SpectralField,
    leray_coeffs,
    leray_project,
    shift_full,
    shift_multiply,
)

Mode = Literal["scalar", "vorticity", "velocity"]


class NoiseError(ValueError):
    """Raised for inconsistent noise specifications."""


def c_d(d: int) -> float:
    return d / (d - 1)


def is_positive(k: Sequence[int]) -> bool:
    """Lexicographic positivity: first nonzero coordinate is positive."""
    for c in k:
        if c != 0:
            return c > 0
    return False


def perp_basis(k: Sequence[int]) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to ``k`` as rows."""
    k = np.asarray(k, dtype=float)
    if k.size == 2:
        return np.array([[-k[1], k[0]]]) / np.hypot(k[0], k[1])
    e_ref = np.array([0.0, 0.0, 1.0])
    a1 = np.cross(e_ref, k)
    if np.linalg.norm(a1) < 1e-12 * np.linalg.norm(k):
        a1 = np.cross(np.array([1.0, 0.0, 0.0]), k)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(k, a1)
    a2 /= np.linalg.norm(a2)
    return np.stack([a1, a2])


@dataclass(frozen=True, eq=False)
class NoiseBasis:
    """Positive-half wavevectors with orthonormal ``k``-perp frames.

    ``kplus`` has shape ``(m, d)`` (lexicographic order) and ``a`` has shape
    ``(m, d - 1, d)``; the frame of ``-k`` is the frame of ``k``.
    """

    d: int
    kplus: np.ndarray
    a: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.concatenate([self.kplus, -self.kplus])

    def frame(self, k: Sequence[int]) -> np.ndarray:
        key = tuple(int(c) for c in k)
        if not is_positive(key):
            key = tuple(-c for c in key)
        try:
            return self.a[self._index[key]]
        except KeyError:
            raise NoiseError(f"wavevector {tuple(k)} not in the basis support") from None

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(c) for c in k): i for i, k in enumerate(self.kplus)}

    def contains(self, k: Sequence[int]) -> bool:
        key = tuple(int(c) for c in k)
        return key in self._index or tuple(-c for c in key) in self._index


def build_basis(d: int, support: Iterable[Sequence[int]]) -> NoiseBasis:
    """Split a symmetric support into ``K+`` and attach ``k``-perp frames."""
    pts = {tuple(int(c) for c in k) for k in support}
    if not pts:
        raise NoiseError("noise support is empty")
    if any(len(k) != d for k in pts):
        raise NoiseError(f"support vectors must have dimension {d}")
    if (0,) * d in pts:
        raise NoiseError("noise support must not contain the zero wavevector")
    missing = [k for k in pts if tuple(-c for c in k) not in pts]
    if missing:
        raise NoiseError(f"support not closed under negation, e.g. {missing[0]}")
    kplus = np.array(sorted(k for k in pts if is_positive(k)), dtype=np.int64)
    a = np.stack([perp_basis(k) for k in kplus])
    return NoiseBasis(d, kplus, a)


@dataclass(frozen=True, eq=False)
class ThetaFamily:
    """Nonnegative coefficients on a finite symmetric support.

    ``kvecs`` lists the full support (both signs) sorted lexicographically and
    ``values`` the matching ``theta_k``.
    """

    d: int
    kvecs: np.ndarray
    values: np.ndarray
    n: int | None = None
    r: float | None = None

    def __post_init__(self) -> None:
        if self.kvecs.shape != (self.values.size, self.d):
            raise NoiseError("kvecs/values shape mismatch")
        if np.any(self.values < 0):
            raise NoiseError("theta must be nonnegative")

    @property
    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))

    @property
    def linf(self) -> float:
        return float(np.max(self.values, initial=0.0))

    @property
    def max_norm(self) -> float:
        """Largest ``|k|_inf`` in the support."""
        return float(np.max(np.abs(self.kvecs), initial=0))

    def radial_defect(self) -> float:
        """Largest spread of ``theta`` within a shell ``|k| = const``."""
        shells: dict[int, list[float]] = {}
        for k, v in zip(self.kvecs, self.values):
            shells.setdefault(int(np.dot(k, k)), []).append(float(v))
        return max((max(v) - min(v) for v in shells.values()), default=0.0)

    def is_symmetric(self) -> bool:
        table = self.as_dict()
        return all(table.get(tuple(-c for c in k)) == v for k, v in table.items())

    def is_radially_complete(self) -> bool:
        """True when every lattice point of each used shell is in the support."""
        table = self.as_dict()
        radii = {int(np.dot(k, k)) for k in self.kvecs}
        for r2 in radii:
            for k in lattice_shell(self.d, r2):
                if k not in table:
                    return False
        return True

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(c) for c in k): float(v) for k, v in zip(self.kvecs, self.values)}

    def positive_half(self) -> tuple[np.ndarray, np.ndarray]:
        mask = np.array([is_positive(k) for k in self.kvecs], dtype=bool)
        return self.kvecs[mask], self.values[mask]

    def rows(self) -> list[tuple]:
        return [tuple(int(c) for c in k) + (float(v),) for k, v in zip(self.kvecs, self.values)]


def lattice_shell(d: int, r2: int) -> list[tuple[int, ...]]:
    R = math.isqrt(r2)
    rng = range(-R, R + 1)
    return [k for k in itertools.product(rng, repeat=d) if sum(c * c for c in k) == r2]


def theta_canonical(d: int, n: int, r: float) -> ThetaFamily:
    """Shell family ``1{n <= |k| <= 2n} / |k|^r`` normalized in l2."""
    if n < 1 or r <= 0:
        raise NoiseError(f"need n >= 1 and r > 0, got n={n}, r={r}")
    R = 2 * n
    pts = [
        k
        for k in itertools.product(range(-R, R + 1), repeat=d)
        if n * n <= sum(c * c for c in k) <= 4 * n * n
    ]
    if not pts:
        raise NoiseError("empty shell")
    kv = np.array(sorted(pts), dtype=np.int64)
    norms = np.sqrt(np.sum(kv.astype(float) ** 2, axis=1))
    raw = norms ** (-float(r))
    return ThetaFamily(d, kv, raw / np.sqrt(np.sum(raw**2)), n=n, r=float(r))


def theta_explicit(d: int, table: Mapping[Sequence[int], float], normalize: bool = True) -> ThetaFamily:
    """Family from an explicit ``k -> theta`` map (symmetric completion applied)."""
    full: dict[tuple[int, ...], float] = {}
    for k, v in table.items():
        k = tuple(int(c) for c in k)
        if len(k) != d or not any(k):
            raise NoiseError(f"invalid wavevector {k}")
        neg = tuple(-c for c in k)
        if neg in full and full[neg] != float(v):
            raise NoiseError(f"theta differs between {k} and {neg}")
        full[k] = float(v)
        full[neg] = float(v)
    kv = np.array(sorted(full), dtype=np.int64).reshape(-1, d)
    vals = np.array([full[tuple(k)] for k in kv], dtype=float)
    if normalize and vals.size:
        vals = vals / np.sqrt(np.sum(vals**2))
    return ThetaFamily(d, kv, vals)


def empty_theta(d: int) -> ThetaFamily:
    return ThetaFamily(d, np.zeros((0, d), dtype=np.int64), np.zeros(0))


def basis_for(theta: ThetaFamily) -> NoiseBasis | None:
    if theta.values.size == 0:
        return None
    return build_basis(theta.d, theta.kvecs)


def _check_support(theta: ThetaFamily, basis: NoiseBasis) -> None:
    if theta.d != basis.d:
        raise NoiseError("theta and basis dimensions differ")
    for k in theta.kvecs:
        if not basis.contains(k):
            raise NoiseError(f"theta support point {tuple(k)} missing from the basis")


def isotropy_matrix(theta: ThetaFamily, basis: NoiseBasis) -> np.ndarray:
    """``sum_{k, alpha} theta_k^2 a_{k,alpha} (x) a_{k,alpha}`` over the full support."""
    _check_support(theta, basis)
    out = np.zeros((theta.d, theta.d))
    for k, v in zip(theta.kvecs, theta.values):
        for a in basis.frame(k):
            out += v * v * np.outer(a, a)
    return out


def isotropy_defect(theta: ThetaFamily, basis: NoiseBasis) -> float:
    """Max-norm distance of the isotropy matrix from ``Id / c_d``."""
    m = isotropy_matrix(theta, basis)
    return float(np.max(np.abs(m - np.eye(theta.d) / c_d(theta.d))))


def prefactor(mode: Mode, d: int, mu: float) -> float:
    if mode == "scalar":
        return math.sqrt(c_d(d) * mu)
    if d != 2:
        raise NoiseError(f"{mode} noise is only defined for d = 2")
    return math.sqrt(2.0 * mu)


@dataclass(frozen=True, eq=False)
class Channels:
    """Flattened channel table in the documented order."""

    k: np.ndarray  # (nch, d) int
    a: np.ndarray  # (nch, d)
    kind: np.ndarray  # (nch,) 0 = cos, 1 = sin
    theta: np.ndarray  # (nch,)

    @property
    def size(self) -> int:
        return int(self.theta.size)


def channels(theta: ThetaFamily, basis: NoiseBasis) -> Channels:
    _check_support(theta, basis)
    table = theta.as_dict()
    ks, as_, kinds, ths = [], [], [], []
    for i, k in enumerate(basis.kplus):
        th = table.get(tuple(int(c) for c in k), 0.0)
        for a in basis.a[i]:
            for kind in (0, 1):
                ks.append(k)
                as_.append(a)
                kinds.append(kind)
                ths.append(th)
    d = basis.d
    return Channels(
        np.array(ks, dtype=np.int64).reshape(-1, d),
        np.array(as_, dtype=float).reshape(-1, d),
        np.array(kinds, dtype=np.int64),
        np.array(ths, dtype=float),
    )


def n_channels(basis: NoiseBasis | None) -> int:
    return 0 if basis is None else 2 * (basis.d - 1) * len(basis.kplus)


@dataclass
class BrownianDriver:
    """Seeded source of Brownian increments for one path.

    The generator is ``PCG64(SeedSequence([seed, path_index]))``. Each step
    draws ``substeps * n_channels`` standard normals in row-major order
    ``(substep, channel)``, scales them by ``sqrt(dt / substeps)`` and sums
    over substeps. A run with ``(dt, substeps = s)`` therefore sees the
    same Brownian path as a run with ``(dt / s, substeps = 1)``.
    """

    seed: int
    path_index: int
    n_channels: int
    dt: float
    substeps: int = 1

    def __post_init__(self) -> None:
        if self.substeps < 1:
            raise NoiseError("substeps must be >= 1")
        ss = np.random.SeedSequence([int(self.seed), int(self.path_index)])
        self._rng = np.random.Generator(np.random.PCG64(ss))
        self._scale = math.sqrt(self.dt / self.substeps)
        self.steps_drawn = 0

    def next(self) -> np.ndarray:
        z = self._rng.standard_normal((self.substeps, self.n_channels))
        self.steps_drawn += 1
        if self.substeps == 1:
            return z[0] * self._scale
        return (z * self._scale).sum(axis=0)


def _channel_field(f: SpectralField, ch: Channels, i: int) -> SpectralField:
    kind = "cos" if ch.kind[i] == 0 else "sin"
    return shift_multiply(ch.k[i], ch.a[i], kind, f)


def apply_transport_noise(
    theta: ThetaFamily,
    basis: NoiseBasis,
    f: SpectralField,
    increments: np.ndarray,
    mu: float,
    mode: Mode = "scalar",
) -> SpectralField:
    """Ito transport increment ``sum_channels xi.grad f * dB`` by exact shifts.

    This is the channel-by-channel reference; the integrators use the
    equivalent padded-grid product in :class:`TransportOperator`.
    """
    ch = channels(theta, basis)
    increments = np.asarray(increments, dtype=float)
    if increments.shape != (ch.size,):
        raise NoiseError(f"expected {ch.size} increments, got shape {increments.shape}")
    _check_mode(mode, f)
    pref = prefactor(mode, f.d, mu)
    out = np.zeros_like(f.coeffs)
    for i in range(ch.size):
        w = 2.0 * pref * ch.theta[i] * increments[i]
        if w == 0.0:
            continue
        out = out + w * _channel_field(f, ch, i).coeffs
    res = SpectralField(f.grid, out, f.rank)
    return leray_project(res) if mode == "velocity" else res


def _check_mode(mode: Mode, f: SpectralField) -> None:
    if mode == "velocity":
        if f.rank != "vector" or f.d != 2:
            raise NoiseError("velocity mode needs a 2D vector field")
    elif f.rank != "scalar":
        raise NoiseError(f"{mode} mode needs a scalar field")
    if mode == "vorticity" and f.d != 2:
        raise NoiseError("vorticity mode needs d = 2")


def quadratic_variation(theta: ThetaFamily, basis: NoiseBasis, f: SpectralField, mu: float, mode: Mode = "scalar") -> float:
    """``sum_channels ||xi.grad f||^2`` (projected in velocity mode)."""
    ch = channels(theta, basis)
    pref = prefactor(mode, f.d, mu)
    total = 0.0
    for i in range(ch.size):
        g = _channel_field(f, ch, i)
        if mode == "velocity":
            g = leray_project(g)
        total += (2.0 * pref * ch.theta[i]) ** 2 * g.l2_sq()
    return total


def stratonovich_corrector(
    theta: ThetaFamily,
    basis: NoiseBasis,
    f: SpectralField,
    mu: float,
    mode: Mode = "scalar",
) -> SpectralField:
    """``(1/2) sum_channels (xi.grad)(xi.grad) f`` by double exact shifts."""
    if mode not in ("scalar", "vorticity"):
        raise NoiseError("corrector is defined for scalar and vorticity modes")
    _check_mode(mode, f)
    ch = channels(theta, basis)
    pref = prefactor(mode, f.d, mu)
    out = np.zeros_like(f.coeffs)
    for i in range(ch.size):
        w = (2.0 * pref * ch.theta[i]) ** 2
        if w == 0.0:
            continue
        once = _channel_field(f, ch, i)
        twice = _channel_field(once, ch, i)
        out = out + 0.5 * w * twice.coeffs
    return SpectralField(f.grid, out, f.rank)


def _check_div_free(u: SpectralField, tol: float = 1e-10) -> None:
    kv = u.grid.kvec
    div = sum(kv[i] * u.coeffs[i] for i in range(u.d))
    scale = max(float(np.max(np.abs(u.coeffs) * np.sqrt(u.grid.k2), initial=0.0)), 1e-300)
    if np.max(np.abs(div), initial=0.0) > tol * max(scale, 1.0):
        raise NoiseError("q_theta needs a divergence-free velocity")


def _leray_full(kfull: np.ndarray, inv_k2: np.ndarray, V: np.ndarray) -> np.ndarray:
    kdotv = sum(kfull[i] * V[i] for i in range(V.shape[0]))
    return V - kfull * (kdotv * inv_k2)[None]


def q_theta(theta: ThetaFamily, basis: NoiseBasis, u: SpectralField, mu: float) -> SpectralField:
    """``-2 mu sum_k theta_k^2 P[(sigma_{-k}.grad) Q[(sigma_k.grad) u]]`` by direct summation.

    ``sigma_k = a_k exp(2 pi i k.x)`` is complex, so intermediates are kept in
    the full spectral layout; products are exact shifts on the grid.
    """
    if u.d != 2 or u.rank != "vector":
        raise NoiseError("q_theta needs a 2D vector field")
    _check_div_free(u)
    _check_support(theta, basis)
    grid = u.grid
    N = grid.N
    freqs = np.fft.fftfreq(N, 1.0 / N)
    kfull = np.stack(np.meshgrid(freqs, freqs, indexing="ij"))
    k2 = np.sum(kfull**2, axis=0)
    inv_k2 = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    ik = TWO_PI * 1j * kfull
    U = grid.to_full(u.coeffs)
    acc = np.zeros_like(U)
    for k0, th in zip(theta.kvecs, theta.values):
        if th == 0.0:
            continue
        neg = [-int(c) for c in k0]
        for a in basis.frame(k0):
            a_grad = a[0] * ik[0] + a[1] * ik[1]
            G = shift_full(grid, a_grad[None] * U, k0)
            H = G - _leray_full(kfull, inv_k2, G)
            G2 = shift_full(grid, a_grad[None] * H, neg)
            acc += (-2.0 * mu * th * th) * G2
    out = _leray_full(kfull, inv_k2, acc)
    return SpectralField(grid, grid.from_full(out), "vector")


def q_theta_symbol_at(theta: ThetaFamily, basis: NoiseBasis, k: Sequence[int], mu: float, grid_half: int | None = None) -> float:
    """Eigenvalue of ``Q_theta`` on the divergence-free mode ``k`` (untruncated by default).

    On a divergence-free 2D mode ``p_k exp(2 pi i k.x)`` the operator acts as
    multiplication by ``8 pi^2 mu sum theta^2 (a.k)^2 (p_k.nhat)^2`` with
    ``nhat`` the direction of ``k + k0``. With ``grid_half`` set, terms whose
    intermediate mode leaves ``|k_i| < grid_half`` are dropped.
    """
    _check_support(theta, basis)
    kv = np.asarray(k, dtype=float)
    p = np.array([-kv[1], kv[0]]) / np.hypot(*kv)
    total = 0.0
    for k0, th in zip(theta.kvecs, theta.values):
        m = kv + k0
        if grid_half is not None and np.any(np.abs(m) >= grid_half):
            continue
        nm = np.hypot(*m)
        proj = 0.0 if nm == 0 else float(np.dot(p, m) / nm) ** 2
        for a in basis.frame(k0):
            total += th * th * float(np.dot(a, kv)) ** 2 * proj
    return 8.0 * np.pi**2 * mu * total


def transfer_weights(theta: ThetaFamily, basis: NoiseBasis, grid: Grid, mode: Mode) -> np.ndarray:
    """Per-mode weight ``w(k)`` with ``sum_channels ||xi.grad e_k||^2 = 8 pi^2 pref^2 w(k)``.

    ``w(k) = sum_{k0} theta^2 (a.k)^2 1{k + k0 retained}``, where velocity mode
    multiplies each term by ``1 - (p_k.nhat)^2`` (the Leray loss of the
    shifted mode). Untruncated, ``w(k) = |k|^2 / c_d`` (resp. ``|k|^2 / 4``
    asymptotically for velocity).
    """
    _check_support(theta, basis)
    kv = grid.kvec
    half = grid.N // 2
    out = np.zeros(grid.spec_shape)
    if mode == "velocity":
        k2 = grid.k2
        inv = np.where(k2 > 0, 1.0 / np.sqrt(np.where(k2 > 0, k2, 1.0)), 0.0)
        p = np.stack([-kv[1] * inv, kv[0] * inv])
    for k0, th in zip(theta.kvecs, theta.values):
        if th == 0.0:
            continue
        inside = np.ones(grid.spec_shape, dtype=bool)
        for i in range(grid.d):
            inside &= np.abs(kv[i] + k0[i]) < half
        if mode == "velocity":
            m = np.stack([kv[0] + k0[0], kv[1] + k0[1]])
            mn2 = m[0] ** 2 + m[1] ** 2
            pm = p[0] * m[0] + p[1] * m[1]
            keep = 1.0 - np.divide(pm**2, mn2, out=np.ones_like(mn2), where=mn2 > 0)
        else:
            keep = 1.0
        for a in basis.frame(k0):
            ak = sum(a[i] * kv[i] for i in range(grid.d))
            out += th * th * ak**2 * keep * inside
    return out * grid.retained


def padded_length(N: int, kmax: int) -> int:
    """Smallest even FFT-friendly length with no aliasing of products onto retained modes.

    Products of a field with modes ``|k_i| < N/2`` and a noise velocity with
    ``|k0_i| <= kmax`` have ``|m_i| <= N/2 - 1 + kmax``; their aliases miss the
    retained band once ``L >= N + kmax - 1``.
    """
    L = sfft.next_fast_len(N + int(kmax) - 1, real=True)
    while L % 2:
        L = sfft.next_fast_len(L + 1, real=True)
    return L


class TransportOperator:
    """Batched Ito transport increment ``P_N[W.grad f]`` on a padded grid.

    ``W = sum_channels xi * dB`` is assembled in Fourier space, both factors
    are evaluated on an ``L``-point grid large enough that the pointwise
    product carries no aliasing into the retained band, and the result is
    truncated to the retained modes. Mathematically this equals the
    channel-by-channel sum of exact shifts.
    """

    def __init__(self, grid: Grid, theta: ThetaFamily, basis: NoiseBasis, mu: float, mode: Mode) -> None:
        self.grid = grid
        self.mode = mode
        d = grid.d
        self.pref = prefactor(mode, d, mu)
        table = theta.as_dict()
        self.kplus = basis.kplus
        self.theta_plus = np.array([table.get(tuple(int(c) for c in k), 0.0) for k in basis.kplus])
        self.a = basis.a
        self.n_channels = n_channels(basis)
        kmax = int(np.max(np.abs(basis.kplus)))
        self.L = L = padded_length(grid.N, kmax)
        self.pad_shape = (L,) * (d - 1) + (L // 2 + 1,)
        # scatter positions of W(k) for k in K+ and of conj W at -k
        last = self.kplus[:, -1]
        direct = last >= 0
        mirror = last <= 0
        self._direct = np.nonzero(direct)[0]
        self._mirror = np.nonzero(mirror)[0]
        self._pos_direct = self._flat(self.kplus[direct])
        self._pos_mirror = self._flat(-self.kplus[mirror])
        # padding index per axis
        N = grid.N
        full_src = np.r_[0 : N // 2, N // 2 + 1 : N]
        full_dst = np.r_[0 : N // 2, L - N // 2 + 1 : L]
        self._src = [full_src] * (d - 1) + [np.arange(N // 2)]
        self._dst = [full_dst] * (d - 1) + [np.arange(N // 2)]
        kp = np.fft.fftfreq(L, 1.0 / L)
        axes = [kp] * (d - 1) + [np.arange(L // 2 + 1, dtype=float)]
        self._ik_pad = [TWO_PI * 1j * k for k in np.meshgrid(*axes, indexing="ij", sparse=True)]
        self._axes_cache: dict[int, tuple[int, ...]] = {}

    def _flat(self, ks: np.ndarray) -> np.ndarray:
        L = self.L
        idx = [(ks[:, i] % L) for i in range(ks.shape[1] - 1)] + [ks[:, -1]]
        return np.ravel_multi_index(tuple(idx), self.pad_shape)

    def _axes(self, ndim: int) -> tuple[int, ...]:
        return tuple(range(ndim - self.grid.d, ndim))

    def velocity_hat(self, dB: np.ndarray) -> np.ndarray:
        """Padded half spectrum of ``W`` for increments of shape ``(B, n_channels)``."""
        B = dB.shape[0]
        d = self.grid.d
        z = dB.reshape(B, len(self.kplus), d - 1, 2)
        zc = z[..., 0] - 1j * z[..., 1]  # (B, m, d-1)
        Wk = self.pref * np.einsum("m,mad,bma->bdm", self.theta_plus, self.a, zc)
        W = np.zeros((B, d, int(np.prod(self.pad_shape))), dtype=complex)
        W[:, :, self._pos_direct] = Wk[:, :, self._direct]
        W[:, :, self._pos_mirror] = np.conj(Wk[:, :, self._mirror])
        return W.reshape((B, d) + self.pad_shape)

    def velocity_physical(self, dB: np.ndarray) -> np.ndarray:
        W = self.velocity_hat(dB)
        Ld = self.L**self.grid.d
        return sfft.irfftn(W, s=(self.L,) * self.grid.d, axes=self._axes(W.ndim)) * Ld

    def pad(self, c: np.ndarray) -> np.ndarray:
        lead = c.shape[: c.ndim - self.grid.d]
        out = np.zeros(lead + self.pad_shape, dtype=complex)
        out[(Ellipsis,) + np.ix_(*self._dst)] = c[(Ellipsis,) + np.ix_(*self._src)]
        return out

    def unpad(self, c: np.ndarray) -> np.ndarray:
        lead = c.shape[: c.ndim - self.grid.d]
        out = np.zeros(lead + self.grid.spec_shape, dtype=complex)
        out[(Ellipsis,) + np.ix_(*self._src)] = c[(Ellipsis,) + np.ix_(*self._dst)]
        return out * self.grid.retained

    def apply(self, state: np.ndarray, dB: np.ndarray) -> np.ndarray:
        """Increment for a batch ``state`` of shape ``(B, spec)`` or ``(B, d, spec)``."""
        d, L = self.grid.d, self.L
        Ld = L**d
        s = (L,) * d
        Wp = self.velocity_physical(dB)  # (B, d, L..)
        P = self.pad(state)
        if self.mode == "velocity":
            comps = [P[:, c] for c in range(d)]
        else:
            comps = [P]
        outs = []
        for pc in comps:
            prod = None
            for j in range(d):
                g = self._ik_pad[j] * pc
                gp = sfft.irfftn(g, s=s, axes=self._axes(g.ndim)) * Ld
                term = Wp[:, j] * gp
                prod = term if prod is None else prod + term
            spec = sfft.rfftn(prod, axes=self._axes(prod.ndim)) / Ld
            outs.append(self.unpad(spec))
        if self.mode == "velocity":
            return leray_coeffs(self.grid, np.stack(outs, axis=1))
        return outs[0]
