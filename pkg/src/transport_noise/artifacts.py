"""Run manifests, canonical JSON reports and CSV dumps.

Reports are serialized with sorted keys and ``repr`` floats, so identical
inputs give byte-identical files. Only the manifest carries timestamps.

CSV column contracts (schema version ``REPORT_SCHEMA``):

``series_<label>.csv``  t, l2_sq, grad_l2_sq, dissipation_integral (path means)
``theta.csv``           k1..kd, theta
``spectrum.csv``        component, k1..kd, re, im (nonzero modes of the initial datum)
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from pydantic import BaseModel

from .noise import ThetaFamily

REPORT_SCHEMA = "1"
OUT_ENV = "TRANSPORT_NOISE_OUT"


class Artifact(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """Written before any compute and rewritten with hashes once the run ends."""

    tool: str = "transport-noise"
    version: str
    command: str
    config_path: str | None
    config: dict
    seed: int
    out_dir: str
    started: str
    finished: str | None = None
    status: str = "running"
    exit_code: int | None = None
    artifacts: list[Artifact] = []


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _clean(obj: Any) -> Any:
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, BaseModel):
        return _clean(obj.model_dump(mode="python"))
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def canonical_json(obj: Any) -> bytes:
    """Deterministic UTF-8 JSON with sorted keys and a trailing newline."""
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_out_dir(flag: str | None, configured: str) -> Path:
    """``--out`` wins, then the ``TRANSPORT_NOISE_OUT`` environment variable, then the config."""
    if flag:
        return Path(flag)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    return Path(configured)


def write_report(path: str | os.PathLike, report: Any) -> Path:
    p = Path(path)
    p.write_bytes(canonical_json({"schema": REPORT_SCHEMA, "report": report}))
    return p


def write_series_csv(path: str | os.PathLike, series: Mapping[str, np.ndarray]) -> Path:
    cols = ["t", "l2_sq", "grad_l2_sq", "dissipation_integral"]
    p = Path(path)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(np.asarray(series[c]) for c in cols)):
            w.writerow([repr(float(x)) for x in row])
    return p


def write_theta_csv(path: str | os.PathLike, theta: ThetaFamily) -> Path:
    p = Path(path)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{i + 1}" for i in range(theta.d)] + ["theta"])
        for row in theta.rows():
            w.writerow([*row[:-1], repr(row[-1])])
    return p


class ManifestWriter:
    """Owns the manifest file for one run."""

    def __init__(self, out_dir: Path, *, version: str, command: str, config_path: str | None, config: dict, seed: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.out_dir / "manifest.json"
        self.manifest = RunManifest(
            version=version,
            command=command,
            config_path=config_path,
            config=config,
            seed=seed,
            out_dir=str(self.out_dir),
            started=_now(),
        )
        self._flush()

    def _flush(self) -> None:
        self.path.write_bytes(canonical_json(self.manifest))

    def finalize(self, artifacts: list[Path], status: str, exit_code: int) -> RunManifest:
        entries = []
        for a in sorted(set(Path(x) for x in artifacts)):
            entries.append(
                Artifact(path=str(a.relative_to(self.out_dir)), sha256=sha256_file(a), bytes=a.stat().st_size)
            )
        self.manifest = self.manifest.model_copy(
            update={"artifacts": entries, "status": status, "exit_code": exit_code, "finished": _now()}
        )
        self._flush()
        return self.manifest


__all__ = [
    "Artifact",
    "ManifestWriter",
    "OUT_ENV",
    "REPORT_SCHEMA",
    "RunManifest",
    "canonical_json",
    "resolve_out_dir",
    "sha256_file",
    "write_report",
    "write_series_csv",
    "write_theta_csv",
]
