"""Command-line entry point.

Exit codes: 0 every check passed, 2 a quantitative check failed, 1 error.
Errors go to standard error as a single ``error: kind=<kind> message=<text>`` line.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Callable

from pydantic import ValidationError

from . import __version__
from .artifacts import (
    ManifestWriter,
    canonical_json,
    resolve_out_dir,
    write_report,
    write_series_csv,
    write_theta_csv,
)
from .config import ConfigWarning, RunConfig, parse_run_config
from .dynamics import BlowUpError, ConfigError
from .experiments import (
    exp_anomalous,
    exp_gradient_gap,
    exp_qtheta_limit,
    exp_scaling_limit,
    exp_uniform_sobolev,
    initial_field,
)
from .noise import NoiseError, theta_canonical
from .selftest import run_selftest
from .spectral import SpectralError, write_spectrum_csv

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

COMMANDS = (
    "anomalous-scalar",
    "anomalous-vorticity",
    "anomalous-velocity",
    "scaling-limit",
    "gradient-gap",
    "qtheta-limit",
    "uniform-sobolev",
    "selftest",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transport-noise",
        description="Transport-noise Monte Carlo experiments on the periodic torus.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=name.replace("-", " "))
        p.add_argument("--config", help="sectioned TOML configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides ensemble.seed)")
        p.add_argument("--out", help="output directory (overrides TRANSPORT_NOISE_OUT and output.dir)")
        p.add_argument("--workers", type=int, help="worker processes, 0 = available parallelism")
        p.add_argument("--paths", type=int, help="ensemble size (overrides ensemble.paths)")
    return parser


def _error(kind: str, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"error: kind={kind} message={text}", file=sys.stderr)
    return EXIT_ERROR


def load_run(config_path: str | None, seed: int | None, paths: int | None) -> RunConfig:
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {config_path}: {exc.strerror}") from None
    else:
        text = ""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConfigWarning)
        run = parse_run_config(text)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be nonnegative")
        run = run.with_updates("ensemble", seed=seed)
    if paths is not None:
        if paths < 1:
            raise ConfigError("--paths must be at least 1")
        run = run.with_updates("ensemble", paths=paths)
    return run


def _runner(command: str, run: RunConfig, workers: int | None, sink: Callable) -> object:
    kw = {"workers": workers, "series_sink": sink}
    if command.startswith("anomalous-"):
        return exp_anomalous(run, command.split("-", 1)[1], **kw)
    if command == "scaling-limit":
        return exp_scaling_limit(run, **kw)
    if command == "gradient-gap":
        return exp_gradient_gap(run, **kw)
    if command == "uniform-sobolev":
        return exp_uniform_sobolev(run, **kw)
    if command == "qtheta-limit":
        e = run.experiment
        return exp_qtheta_limit(
            e.qtheta_n_list,
            e.qtheta_mode,
            run.physics.mu,
            nu=e.qtheta_nu,
            dt=e.qtheta_dt,
            T=e.qtheta_T,
            seed=run.ensemble.seed,
            config=run.model_dump(mode="json"),
        )
    raise ConfigError(f"unknown command {command}")


def _theta_ns(report) -> list[int]:
    if hasattr(report, "entries"):
        return sorted({e.n for e in report.entries})
    return sorted({r.n for r in getattr(report, "rows", []) if r.n > 0})


def execute(args: argparse.Namespace) -> int:
    run = load_run(args.config, args.seed, args.paths)
    out = resolve_out_dir(args.out, run.output.dir)
    workers = run.ensemble.workers if args.workers is None else args.workers
    if workers < 0:
        raise ConfigError("--workers must be nonnegative")
    manifest = ManifestWriter(
        out,
        version=__version__,
        command=args.command,
        config_path=args.config,
        config=run.model_dump(mode="json"),
        seed=run.ensemble.seed,
    )
    artifacts: list[Path] = []
    status, code = "error", EXIT_ERROR
    try:
        if args.command == "selftest":
            report = run_selftest(run.ensemble.seed)
        else:

            def sink(label: str, series: dict) -> None:
                if run.output.series:
                    artifacts.append(write_series_csv(out / f"series_{label}.csv", series))

            if run.output.spectrum:
                artifacts.append(out / "spectrum.csv")
                write_spectrum_csv(initial_field(run), artifacts[-1])
            report = _runner(args.command, run, workers, sink)
            if run.output.theta_csv:
                d = 2 if args.command == "qtheta-limit" else run.grid.d
                for n in _theta_ns(report):
                    artifacts.append(write_theta_csv(out / f"theta_n{n}.csv", theta_canonical(d, n, run.noise.r)))
        artifacts.append(write_report(out / "report.json", report))
        status, code = ("passed", EXIT_PASS) if report.passed else ("failed", EXIT_FAIL)
        print(canonical_json({"command": args.command, "passed": report.passed, "out": str(out)}).decode(), end="")
        return code
    finally:
        manifest.finalize(artifacts, status, code)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_ERROR
    try:
        return execute(args)
    except ConfigError as exc:
        return _error("config", str(exc))
    except ValidationError as exc:
        return _error("config", "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()))
    except BlowUpError as exc:
        return _error("blowup", str(exc))
    except (NoiseError, SpectralError) as exc:
        return _error("model", str(exc))
    except OSError as exc:
        return _error("io", f"{exc.filename or ''} {exc.strerror or exc}")
    except KeyboardInterrupt:
        return _error("interrupted", "run cancelled")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
