"""Pseudo-spectral simulation of transport noise on the periodic torus.

Modules: ``spectral`` (Fourier fields and operators), ``noise`` (coefficient
families, channels, Brownian drivers), ``dynamics`` (stochastic integrators),
``experiments`` (Monte Carlo studies), ``config``/``artifacts``/``cli`` (I/O).
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

from .config import ConfigWarning, RunConfig, parse_config, parse_run_config  # noqa: E402
from .dynamics import (  # noqa: E402
    BlowUpError,
    ConfigError,
    SimConfig,
    ThetaSpec,
    Trajectory,
    run_deterministic,
    run_path,
    step_scalar,
    step_velocity,
    step_vorticity,
)
from .noise import BrownianDriver, NoiseBasis, ThetaFamily, q_theta, theta_canonical  # noqa: E402
from .spectral import Grid, SpectralField, from_modes, sobolev_norm  # noqa: E402

__all__ = [
    "BlowUpError",
    "BrownianDriver",
    "ConfigError",
    "ConfigWarning",
    "Grid",
    "NoiseBasis",
    "RunConfig",
    "SimConfig",
    "SpectralField",
    "ThetaFamily",
    "ThetaSpec",
    "Trajectory",
    "__version__",
    "from_modes",
    "parse_config",
    "parse_run_config",
    "q_theta",
    "run_deterministic",
    "run_path",
    "sobolev_norm",
    "step_scalar",
    "step_velocity",
    "step_vorticity",
    "theta_canonical",
]
