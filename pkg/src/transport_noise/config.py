"""Sectioned key-value run configuration (TOML syntax).

Sections and keys (all optional, defaults shown by ``describe_schema``):

``[grid]``        d, N
``[physics]``     equation, kappa, mu, T, dt, scheme, dealias, q_theta,
                  substeps, cutoff_enabled, cutoff_R, cutoff_r
``[noise]``       n, r, support, schedule, n_list
``[ensemble]``    paths, seed, batch, workers
``[experiment]``  kappas, initial, initial_l2_sq, r0, coeff_r, tolerance,
                  ci_cap, eps, eta_fraction, gap_fraction, gap_ratio,
                  qtheta_mode, qtheta_n_list, qtheta_nu, qtheta_dt, qtheta_T,
                  baseline, settle_sup, limit_tolerance
``[output]``      dir, series, theta_csv, spectrum

Unknown sections or keys are errors.
"""

from __future__ import annotations

import math
import sys
import warnings
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import ConfigError, CutoffSpec, SimConfig, ThetaSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ConfigWarning(UserWarning):
    """Non-fatal configuration issue (stability guard, grid capacity margin)."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(_Section):
    d: int = 2
    N: int = 128


class PhysicsSection(_Section):
    equation: Literal["scalar", "vorticity", "velocity"] = "scalar"
    kappa: float = Field(1e-3, ge=0)
    mu: float = Field(0.5, ge=0)
    T: float = Field(1.0, gt=0)
    dt: float | None = Field(None, gt=0)
    scheme: Literal["balanced", "ito"] = "balanced"
    dealias: bool = True
    q_theta: bool = True
    substeps: int = Field(1, ge=1)
    cutoff_enabled: bool = False
    cutoff_R: float = Field(1.0, gt=0)
    cutoff_r: float = Field(0.5, gt=0, lt=1)


class NoiseSection(_Section):
    n: int = Field(16, ge=1)
    r: float = Field(1.0, gt=0)
    support: Literal["shell", "none"] = "shell"
    schedule: Literal["sqrt", "fixed"] = "sqrt"
    n_list: list[int] = [1, 4, 16]


class EnsembleSection(_Section):
    paths: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)
    batch: int = Field(8, ge=1)
    workers: int = Field(0, ge=0)


class ExperimentSection(_Section):
    kappas: list[float] = [1e-2, 1e-3]
    initial: list[list[float]] = [[1, 0, 1.0, 0.0]]
    initial_l2_sq: float | None = Field(1.0, ge=0)
    r0: float = Field(0.1, ge=0, lt=0.5)
    coeff_r: float = Field(0.5, gt=0)
    tolerance: float = Field(0.15, gt=0)
    ci_cap: float = Field(0.25, gt=0)
    eps: float = Field(0.2, gt=0)
    eta_fraction: float = Field(0.5, gt=0, lt=1)
    gap_fraction: float = Field(0.1, gt=0)
    gap_ratio: float = Field(3.0, gt=1)
    qtheta_mode: list[int] = [1, 1]
    qtheta_n_list: list[int] = [2, 4, 8, 16]
    qtheta_nu: float = Field(0.01, ge=0)
    qtheta_dt: float = Field(1e-4, gt=0)
    qtheta_T: float = Field(0.1, gt=0)
    baseline: bool = True
    settle_sup: bool = True
    limit_tolerance: float = Field(0.2, gt=0)


class OutputSection(_Section):
    dir: str = "out"
    series: bool = True
    theta_csv: bool = True
    spectrum: bool = True


class RunConfig(_Section):
    """Full parsed run configuration."""

    grid: GridSection = GridSection()
    physics: PhysicsSection = PhysicsSection()
    noise: NoiseSection = NoiseSection()
    ensemble: EnsembleSection = EnsembleSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _validate_sim(self) -> "RunConfig":
        try:
            self.sim()
        except ValidationError as exc:
            msgs = [_section_path(e["msg"]) for e in exc.errors()]
            raise ValueError("; ".join(msgs)) from None
        return self

    def sim(self, **overrides) -> SimConfig:
        """SimConfig for this run; keyword overrides replace single fields."""
        p, g, nz, e = self.physics, self.grid, self.noise, self.ensemble
        fields = dict(
            d=g.d,
            N=g.N,
            dt=p.dt,
            T=p.T,
            kappa=p.kappa,
            mu=p.mu,
            theta=ThetaSpec(n=nz.n, r=nz.r, support=nz.support),
            paths=e.paths,
            equation=p.equation,
            cutoff=CutoffSpec(enabled=p.cutoff_enabled, R=p.cutoff_R, r_cut=p.cutoff_r),
            dealias=p.dealias,
            seed=e.seed,
            scheme=p.scheme,
            substeps=p.substeps,
            batch=e.batch,
            q_theta=p.q_theta,
        )
        fields.update(overrides)
        return SimConfig(**fields)

    def with_updates(self, section: str, **values) -> "RunConfig":
        data = self.model_dump()
        data[section].update(values)
        return RunConfig.model_validate(data)


_SECTION_OF = {
    "theta.n": "noise.n",
    "dt": "physics.dt",
    "N": "grid.N",
    "d": "grid.d",
    "equation": "physics.equation",
}


def _section_path(msg: str) -> str:
    """Rewrite a ``field: text`` simulation message to its configuration key."""
    msg = msg.removeprefix("Value error, ")
    head, sep, rest = msg.partition(": ")
    if sep and head in _SECTION_OF:
        return f"{_SECTION_OF[head]}: {rest}"
    return msg


def schedule_n(kappa: float, N: int, k_init: int = 1, rule: str = "sqrt", fixed: int = 16) -> int:
    """``n(kappa) = ceil(kappa^{-1/2})`` clipped to the largest ``n`` with ``2n + k_init < N/2``."""
    cap = max(1, (N // 2 - k_init - 1) // 2)
    if rule == "fixed":
        return min(fixed, cap)
    if kappa <= 0:
        return cap
    return max(1, min(math.ceil(kappa ** -0.5 - 1e-12), cap))


def _format_loc(loc: tuple) -> str:
    return ".".join(str(p) for p in loc if p not in ("_validate_sim",))


def parse_run_config(text: str) -> RunConfig:
    """Parse and validate configuration text; unknown keys are hard errors."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax: {exc}") from None
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = _format_loc(err["loc"])
            msg = err["msg"].removeprefix("Value error, ")
            msgs.append(f"{loc}: {msg}" if loc else msg)
        raise ConfigError("; ".join(msgs)) from None
    for w in config_warnings(cfg):
        warnings.warn(w, ConfigWarning, stacklevel=2)
    return cfg


def config_warnings(cfg: RunConfig) -> list[str]:
    sim = cfg.sim()
    out = list(sim.warnings)
    kmax = max((max(abs(int(c)) for c in row[: cfg.grid.d]) for row in cfg.experiment.initial), default=0)
    top = sim.theta.top_frequency
    if top and cfg.grid.N // 2 <= top + kmax:
        out.append(
            f"grid capacity margin: N/2 = {cfg.grid.N // 2} <= 2n + initial frequency = {top + kmax}"
        )
    return out


def parse_config(text: str) -> SimConfig:
    """Validated :class:`SimConfig` from configuration text."""
    return parse_run_config(text).sim()


def describe_schema() -> dict:
    """Defaults of every section, for documentation and ``--help`` output."""
    return RunConfig().model_dump()
