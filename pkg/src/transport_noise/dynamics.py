"""Time integration of the transport-noise SPDEs and their deterministic limits.

Two schemes are available for the stochastic equations.

``scheme="ito"``
    Lie splitting with exact diffusion at the Ito-boosted coefficient
    ``kappa + mu``, then an additive Euler-Maruyama transport increment (plus
    an explicit Euler step of ``Q_theta`` in velocity form). Noise off, it
    reproduces the limit semigroup exactly.

``scheme="balanced"`` (default)
    The Ito drift is realised per mode as the damping factor
    ``S_k = sqrt(exp(-y_k) / (1 + x_k))`` where ``y_k`` is the molecular loss
    and ``x_k`` is the exact expected transfer of mode ``k`` into retained
    modes over one step. The transport increment is applied to ``S rho`` and
    the result is rescaled so that the L2 norm after the step equals the norm
    of the exact molecular heat step. The discrete energy balance therefore
    holds pathwise, the expected drift matches the Ito drift to first order,
    and the scheme is unconditionally L2-stable.

Dissipation bookkeeping uses the exact in-step molecular loss
``(1/2) sum |c_k|^2 (1 - exp(-8 pi^2 kappa |k|^2 dt))`` of the state that
enters the diffusion substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .noise import (
    BrownianDriver,
    NoiseBasis,
    ThetaFamily,
    TransportOperator,
    basis_for,
    c_d,
    empty_theta,
    n_channels,
    prefactor,
    theta_canonical,
    transfer_weights,
)
from .spectral import (
    TWO_PI,
    Grid,
    SpectralField,
    biot_savart_coeffs,
    leray_coeffs,
)

Equation = Literal["scalar", "vorticity", "velocity"]

STABILITY_CONSTANT = 0.25
BLOWUP_THRESHOLD = 1e12


class ConfigError(ValueError):
    """Invalid configuration; messages name the offending field path."""


class BlowUpError(RuntimeError):
    """A diagnostic became non-finite or exceeded the blow-up threshold."""

    def __init__(self, step: int, t: float, value: float) -> None:
        super().__init__(f"blow-up at step {step} (t={t:.6g}): diagnostic value {value!r}")
        self.step = step
        self.t = t
        self.value = value


class ThetaSpec(BaseModel):
    """Canonical shell family ``theta^n`` or no noise at all."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(16, ge=1)
    r: float = Field(1.0, gt=0)
    support: Literal["shell", "none"] = "shell"

    def build(self, d: int) -> ThetaFamily:
        if self.support == "none":
            return empty_theta(d)
        return theta_canonical(d, self.n, self.r)

    @property
    def top_frequency(self) -> int:
        return 0 if self.support == "none" else 2 * self.n


class CutoffSpec(BaseModel):
    """Nonlinearity cut-off ``phi(||zeta||_{H^r_cut} / R)``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = False
    R: float = Field(1.0, gt=0)
    r_cut: float = Field(0.5, gt=0, lt=1)


class SimConfig(BaseModel):
    """Run parameters for one equation on one grid.

    ``kappa`` is the molecular coefficient (diffusivity or viscosity).
    ``dt = None`` selects the largest ``T / m`` satisfying the stability guard.
    """

    model_config = ConfigDict(extra="forbid")

    d: int = 2
    N: int = 128
    dt: float | None = None
    T: float = Field(1.0, gt=0)
    kappa: float = Field(1e-3, ge=0)
    mu: float = Field(0.5, ge=0)
    theta: ThetaSpec = ThetaSpec()
    paths: int = Field(64, ge=1)
    equation: Equation = "scalar"
    cutoff: CutoffSpec = CutoffSpec()
    dealias: bool = True
    seed: int = Field(0, ge=0)
    scheme: Literal["balanced", "ito"] = "balanced"
    substeps: int = Field(1, ge=1)
    batch: int = Field(8, ge=1)
    q_theta: bool = True

    @model_validator(mode="after")
    def _check(self) -> "SimConfig":
        if self.d not in (2, 3):
            raise ValueError(f"d: must be 2 or 3, got {self.d}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N: must be a power of two >= 8, got {self.N}")
        if self.equation != "scalar" and self.d != 2:
            raise ValueError(f"equation: {self.equation!r} requires d = 2")
        if self.theta.support == "shell" and 2 * self.theta.n >= self.N // 2:
            raise ValueError(
                f"theta.n: grid capacity 2n = {2 * self.theta.n} must be < N/2 = {self.N // 2}"
            )
        if self.dt is None:
            self.dt = self.auto_dt()
        if self.dt <= 0:
            raise ValueError("dt: must be positive")
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-9 * max(m, 1.0) or round(m) < 1:
            raise ValueError(f"dt: T/dt = {m!r} is not an integer")
        return self

    @property
    def c_d(self) -> float:
        return c_d(self.d)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def guard_value(self, dt: float | None = None) -> float:
        dt = self.dt if dt is None else dt
        top = self.theta.top_frequency
        return dt * 8.0 * math.pi**2 * self.mu * top**2

    def guard_bound(self) -> float:
        """Largest ``dt`` with ``dt * 8 pi^2 mu (2n)^2 <= 0.25``."""
        top = self.theta.top_frequency
        if top == 0 or self.mu == 0:
            return math.inf
        return STABILITY_CONSTANT / (8.0 * math.pi**2 * self.mu * top**2)

    def auto_dt(self) -> float:
        bound = self.guard_bound()
        m = 1000 if not math.isfinite(bound) else max(1, math.ceil(self.T / bound - 1e-12))
        return self.T / m

    @property
    def warnings(self) -> list[str]:
        out = []
        g = self.guard_value()
        if g > STABILITY_CONSTANT:
            out.append(
                f"stability guard: dt*8*pi^2*mu*(2n)^2 = {g:.4g} exceeds {STABILITY_CONSTANT} "
                f"(dt = {self.dt:.4g}, bound dt <= {self.guard_bound():.4g})"
            )
        return out

    def steps_for(self, dt: float) -> int:
        return int(round(self.T / dt))


@dataclass
class Trajectory:
    """Per-step diagnostics of one path (arrays of length ``n_steps + 1``)."""

    t: np.ndarray
    l2_sq: np.ndarray
    grad_l2_sq: np.ndarray
    dissipation_integral: np.ndarray
    hs_norms: dict[float, np.ndarray] = field(default_factory=dict)
    distance: np.ndarray | None = None
    final: SpectralField | None = None
    snapshots: dict[int, SpectralField] = field(default_factory=dict)

    def check(self) -> None:
        if np.any(np.diff(self.dissipation_integral) < 0):
            raise AssertionError("dissipation integral decreased")
        for arr in (self.l2_sq, self.grad_l2_sq, self.dissipation_integral):
            if not np.all(np.isfinite(arr)):
                raise AssertionError("non-finite diagnostic")

    def columns(self) -> dict[str, np.ndarray]:
        cols = {
            "t": self.t,
            "l2_sq": self.l2_sq,
            "grad_l2_sq": self.grad_l2_sq,
            "dissipation_integral": self.dissipation_integral,
        }
        for s, arr in sorted(self.hs_norms.items()):
            cols[f"h{s:g}_norm"] = arr
        if self.distance is not None:
            cols["distance_to_limit"] = self.distance
        return cols


def cutoff_factor_value(s: float) -> float:
    """``phi(s)``: 1 on [0,1], ``1 - (3t^2 - 2t^3)`` with ``t = s - 1`` on [1,2], 0 beyond."""
    t = min(max(s - 1.0, 0.0), 1.0)
    return 1.0 - (3.0 * t * t - 2.0 * t * t * t)


def cutoff_factor(zeta: SpectralField, R: float, r_cut: float) -> float:
    from .spectral import sobolev_norm

    if R <= 0:
        raise ConfigError("cut-off radius must be positive")
    return cutoff_factor_value(sobolev_norm(zeta, r_cut) / R)


class Integrator:
    """Batched one-step maps for a configuration.

    States are raw coefficient arrays of shape ``(B,) + spec_shape`` (scalar,
    vorticity) or ``(B, 2) + spec_shape`` (velocity).
    """

    def __init__(self, cfg: SimConfig, deterministic: bool = False, dt: float | None = None) -> None:
        self.cfg = cfg
        self.deterministic = deterministic
        self.dt = float(cfg.dt if dt is None else dt)
        self.grid = grid = Grid(cfg.d, cfg.N)
        self.equation = cfg.equation
        self.theta = cfg.theta.build(cfg.d)
        self.basis: NoiseBasis | None = basis_for(self.theta)
        self.n_channels = 0 if deterministic else n_channels(self.basis)
        k2 = grid.k2
        kappa, mu, dt = cfg.kappa, cfg.mu, self.dt
        four_pi2 = 4.0 * math.pi**2
        self.y = 2.0 * four_pi2 * kappa * k2 * dt
        self.molecular = np.exp(-0.5 * self.y) * grid.retained
        self.loss_weight = 1.0 - np.exp(-self.y)
        self.op: TransportOperator | None = None
        self.q_symbol = np.zeros(grid.spec_shape)
        self._ik = [TWO_PI * 1j * ki for ki in grid.k]
        mode = cfg.equation
        if deterministic:
            eff = kappa + (mu / 4.0 if cfg.equation == "velocity" else mu)
            self.linear = np.exp(-four_pi2 * eff * k2 * dt) * grid.retained
            return
        have_noise = self.basis is not None and mu > 0
        if have_noise:
            self.op = TransportOperator(grid, self.theta, self.basis, mu, mode)
        if cfg.scheme == "ito":
            self.linear = np.exp(-four_pi2 * (kappa + mu) * k2 * dt) * grid.retained
            if mode == "velocity" and have_noise and cfg.q_theta:
                w_s = transfer_weights(self.theta, self.basis, grid, "scalar")
                w_v = transfer_weights(self.theta, self.basis, grid, "velocity")
                self.q_symbol = 8.0 * math.pi**2 * mu * (w_s - w_v)
        else:
            if have_noise:
                pref = prefactor(mode, cfg.d, mu)
                w = transfer_weights(self.theta, self.basis, grid, "velocity" if mode == "velocity" else "scalar")
                self.x = 8.0 * math.pi**2 * pref**2 * w * dt
            else:
                self.x = np.zeros(grid.spec_shape)
            self.linear = np.sqrt(np.exp(-self.y) / (1.0 + self.x)) * grid.retained

    # -- diagnostics --

    def l2_sq(self, s: np.ndarray) -> np.ndarray:
        out = self.grid.sum_sq(s)
        return out.sum(axis=1) if self.equation == "velocity" else out

    def grad_sq(self, s: np.ndarray) -> np.ndarray:
        out = self.grid.sum_sq(s, 4.0 * math.pi**2 * self.grid.k2)
        return out.sum(axis=1) if self.equation == "velocity" else out

    def weighted_sq(self, s: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = self.grid.sum_sq(s, w)
        return out.sum(axis=1) if self.equation == "velocity" else out

    def step_loss(self, s: np.ndarray) -> np.ndarray:
        """Exact molecular dissipation ``int kappa ||grad||^2`` over one heat step of ``s``."""
        return 0.5 * self.weighted_sq(s, self.loss_weight)

    # -- nonlinear terms --

    def _cutoff(self, s: np.ndarray) -> np.ndarray:
        c = self.cfg.cutoff
        if not c.enabled:
            return np.ones(s.shape[0])
        w = (1.0 + 4.0 * math.pi**2 * self.grid.k2) ** c.r_cut
        norms = np.sqrt(self.weighted_sq(s, w))
        return np.array([cutoff_factor_value(v / c.R) for v in norms])

    def _mask(self) -> np.ndarray:
        return self.grid.dealias if self.cfg.dealias else self.grid.retained

    def nonlinear(self, s: np.ndarray) -> np.ndarray:
        grid = self.grid
        mask = self._mask()
        if self.equation == "vorticity":
            u = biot_savart_coeffs(grid, s * mask)  # (B, 2, spec)
            up = grid.to_physical(u)
            zp = grid.to_physical(s * mask)
            flux = grid.to_spectral(up * zp[:, None]) * mask
            div = self._ik[0] * flux[:, 0] + self._ik[1] * flux[:, 1]
            return -div * self._cutoff(s)[:, None, None]
        if self.equation == "velocity":
            up = grid.to_physical(s * mask)
            out = []
            for i in range(2):
                prods = grid.to_spectral(up[:, i : i + 1] * up) * mask  # (B, 2, spec) = u_i u_j
                out.append(self._ik[0] * prods[:, 0] + self._ik[1] * prods[:, 1])
            return -leray_coeffs(grid, np.stack(out, axis=1))
        raise AssertionError("scalar equation has no nonlinearity")

    def heun(self, s: np.ndarray) -> np.ndarray:
        dt = self.dt
        k1 = self.nonlinear(s)
        k2 = self.nonlinear(s + dt * k1)
        return s + 0.5 * dt * (k1 + k2)

    # -- one step --

    def _bcast(self, m: np.ndarray) -> np.ndarray:
        return m[None, None] if self.equation == "velocity" else m[None]

    def step(self, s: np.ndarray, dB: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Advance a batch; returns the new state and the in-step dissipation."""
        if self.equation != "scalar":
            s = self.heun(s)
        loss = self.step_loss(s)
        lin = self._bcast(self.linear)
        if self.deterministic:
            out = lin * s
        elif self.cfg.scheme == "ito":
            out = lin * s
            if self.equation == "velocity" and self.cfg.q_theta:
                out = out + self.dt * self._bcast(self.q_symbol) * out
            if self.op is not None and dB is not None:
                out = out + self.op.apply(out, dB)
        else:
            target = self.weighted_sq(s, np.exp(-self.y))
            damped = lin * s
            if self.op is not None and dB is not None:
                out = damped + self.op.apply(damped, dB)
            else:
                out = damped
            have = self.l2_sq(out)
            lam = np.sqrt(np.divide(target, have, out=np.zeros_like(have), where=have > 0))
            out = out * (lam[:, None, None, None] if self.equation == "velocity" else lam.reshape((-1,) + (1,) * self.grid.d))
        if self.equation == "velocity":
            out = leray_coeffs(self.grid, out)
        out[(Ellipsis,) + (0,) * self.grid.d] = 0.0
        return out, loss


def _as_batch(initial: SpectralField, B: int) -> np.ndarray:
    return np.repeat(initial.coeffs[None], B, axis=0).astype(complex)


@dataclass
class BatchResult:
    """Diagnostics for a batch of paths, arrays of shape ``(B, n_steps + 1)``."""

    path_indices: list[int]
    t: np.ndarray
    l2_sq: np.ndarray
    grad_l2_sq: np.ndarray
    dissipation: np.ndarray
    hs_sq: dict[float, np.ndarray]
    distance: np.ndarray | None
    final: np.ndarray

    def trajectory(self, row: int, grid: Grid, rank: str) -> Trajectory:
        return Trajectory(
            t=self.t,
            l2_sq=self.l2_sq[row],
            grad_l2_sq=self.grad_l2_sq[row],
            dissipation_integral=self.dissipation[row],
            hs_norms={s: np.sqrt(v[row]) for s, v in self.hs_sq.items()},
            distance=None if self.distance is None else self.distance[row],
            final=SpectralField(grid, self.final[row], rank),
        )


def simulate_batch(
    cfg: SimConfig,
    initial: SpectralField,
    path_indices: Sequence[int],
    *,
    hs_orders: Sequence[float] = (),
    reference: bool = False,
    zero_noise: bool = False,
    dt: float | None = None,
    substeps: int | None = None,
    deterministic: bool = False,
    settle_sup: bool = False,
) -> BatchResult:
    """Integrate a fixed batch of paths in lockstep.

    With ``reference`` the deterministic limit is integrated alongside and the
    L2 distance of every path to it is recorded at every step.

    ``settle_sup`` stops early once every path satisfies
    ``||rho|| + ||rho_det|| <= sup distance so far``. Both norms are
    nonincreasing (pathwise for the balanced scalar scheme, exactly for the
    heat limit), so later distances cannot exceed the recorded supremum and
    the supremum is final. Returned arrays are then shorter than the horizon.
    """
    if settle_sup and not (reference and cfg.equation == "scalar" and cfg.scheme == "balanced"):
        raise ConfigError("settle_sup needs reference=True, the scalar equation and the balanced scheme")
    integ = Integrator(cfg, deterministic=deterministic, dt=dt)
    grid = integ.grid
    B = len(path_indices)
    steps = cfg.steps_for(integ.dt)
    sub = cfg.substeps if substeps is None else substeps
    drivers = []
    if integ.op is not None and not zero_noise and not deterministic:
        drivers = [
            BrownianDriver(cfg.seed, p, integ.n_channels, integ.dt, sub) for p in path_indices
        ]
    state = _as_batch(initial, B)
    ref_integ = Integrator(cfg, deterministic=True, dt=integ.dt) if reference else None
    ref_state = _as_batch(initial, 1) if reference else None
    l2 = np.empty((B, steps + 1))
    gr = np.empty((B, steps + 1))
    diss = np.zeros((B, steps + 1))
    weights = {s: (1.0 + 4.0 * math.pi**2 * grid.k2) ** s for s in hs_orders}
    hs = {s: np.empty((B, steps + 1)) for s in hs_orders}
    dist = np.empty((B, steps + 1)) if reference else None

    def record(i: int) -> None:
        l2[:, i] = integ.l2_sq(state)
        gr[:, i] = integ.grad_sq(state)
        for s, w in weights.items():
            hs[s][:, i] = integ.weighted_sq(state, w)
        if reference:
            dist[:, i] = np.sqrt(integ.l2_sq(state - ref_state))
        bad = ~np.isfinite(l2[:, i]) | (l2[:, i] > BLOWUP_THRESHOLD)
        if np.any(bad):
            raise BlowUpError(i, i * integ.dt, float(l2[:, i][bad][0]))

    record(0)
    last = steps
    for i in range(1, steps + 1):
        dB = np.stack([drv.next() for drv in drivers]) if drivers else None
        state, loss = integ.step(state, dB)
        diss[:, i] = diss[:, i - 1] + loss
        if reference:
            ref_state, _ = ref_integ.step(ref_state, None)
        record(i)
        if settle_sup:
            bound = np.sqrt(l2[:, i]) + np.sqrt(integ.l2_sq(ref_state)[0])
            if np.all(bound <= dist[:, : i + 1].max(axis=1) * (1.0 - 1e-12)):
                last = i
                break
    n = last + 1
    t = np.arange(n) * integ.dt
    return BatchResult(
        list(path_indices),
        t,
        l2[:, :n],
        gr[:, :n],
        diss[:, :n],
        {s: v[:, :n] for s, v in hs.items()},
        None if dist is None else dist[:, :n],
        state,
    )


def field_rank(cfg: SimConfig) -> str:
    return "vector" if cfg.equation == "velocity" else "scalar"


def _check_initial(cfg: SimConfig, initial: SpectralField) -> None:
    if initial.grid != Grid(cfg.d, cfg.N):
        raise ConfigError("initial field grid does not match the configuration")
    if initial.rank != field_rank(cfg):
        raise ConfigError(f"{cfg.equation} needs a {field_rank(cfg)} initial field")
    if initial.mean() > 1e-12:
        raise ConfigError("initial field must be mean-zero")


def run_path(cfg: SimConfig, path_index: int, initial: SpectralField, **kw) -> Trajectory:
    """Full trajectory of one path; deterministic given ``(cfg.seed, path_index)``."""
    _check_initial(cfg, initial)
    res = simulate_batch(cfg, initial, [path_index], **kw)
    return res.trajectory(0, Grid(cfg.d, cfg.N), field_rank(cfg))


def run_deterministic(cfg: SimConfig, initial: SpectralField, **kw) -> Trajectory:
    """Limit equation: diffusion ``kappa + mu`` (``kappa + mu/4`` for velocity), no noise."""
    _check_initial(cfg, initial)
    res = simulate_batch(cfg, initial, [0], deterministic=True, **kw)
    return res.trajectory(0, Grid(cfg.d, cfg.N), field_rank(cfg))


@lru_cache(maxsize=8)
def _cached_integrator(cfg_json: str) -> Integrator:
    return Integrator(SimConfig.model_validate_json(cfg_json))


def step_once(cfg: SimConfig, state: SpectralField, dB: np.ndarray | None) -> SpectralField:
    integ = _cached_integrator(cfg.model_dump_json())
    out, _ = integ.step(state.coeffs[None].astype(complex), None if dB is None else np.asarray(dB)[None])
    return SpectralField(state.grid, out[0], state.rank)


def _step_checked(cfg: SimConfig, state: SpectralField, driver: BrownianDriver | np.ndarray | None, equation: Equation) -> SpectralField:
    if cfg.equation != equation:
        raise ConfigError(f"configuration selects {cfg.equation!r}, not {equation!r}")
    if equation == "velocity":
        if state.rank != "vector":
            raise ConfigError("velocity step needs a vector field")
    elif state.rank != "scalar":
        raise ConfigError(f"{equation} step needs a scalar field")
    if state.mean() > 1e-12:
        raise ConfigError("state must be mean-zero")
    dB = driver.next() if isinstance(driver, BrownianDriver) else driver
    out = step_once(cfg, state, dB)
    if not np.all(np.isfinite(out.coeffs)) or out.l2_sq() > BLOWUP_THRESHOLD:
        raise BlowUpError(0, cfg.dt, out.l2_sq())
    return out


def step_scalar(state: SpectralField, cfg: SimConfig, driver: BrownianDriver | np.ndarray | None) -> SpectralField:
    return _step_checked(cfg, state, driver, "scalar")


def step_vorticity(state: SpectralField, cfg: SimConfig, driver: BrownianDriver | np.ndarray | None) -> SpectralField:
    return _step_checked(cfg, state, driver, "vorticity")


def step_velocity(state: SpectralField, cfg: SimConfig, driver: BrownianDriver | np.ndarray | None) -> SpectralField:
    return _step_checked(cfg, state, driver, "velocity")


def make_driver(cfg: SimConfig, path_index: int, dt: float | None = None, substeps: int | None = None) -> BrownianDriver:
    basis = basis_for(cfg.theta.build(cfg.d))
    return BrownianDriver(
        cfg.seed, path_index, n_channels(basis), cfg.dt if dt is None else dt, cfg.substeps if substeps is None else substeps
    )
